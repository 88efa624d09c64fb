//! KITTI-protocol evaluation: difficulty binning, greedy matching,
//! precision/recall over the full score sweep, and AP at 11 or 40 recall
//! positions for 3D and BEV overlap.
//!
//! Difficulty levels are cumulative as in the benchmark devkit: evaluating
//! at `Moderate` counts every object whose own difficulty is `Easy` or
//! `Moderate`; harder objects at that level are ignored, meaning a detection
//! matched to them is neither a true nor a false positive.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, iou_bev, Box7, ObjectClass};
use crate::postprocess::Detection;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub const LEVELS: [Difficulty; 3] = [Self::Easy, Self::Moderate, Self::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Moderate => "moderate",
            Self::Hard => "hard",
            Self::Ignored => "ignored",
        }
    }
}

/// `(min 2D height px, max occlusion, max truncation)` per level.
const CRITERIA: [(Difficulty, f64, i32, f64); 3] = [
    (Difficulty::Easy, 40.0, 0, 0.15),
    (Difficulty::Moderate, 25.0, 1, 0.30),
    (Difficulty::Hard, 25.0, 2, 0.50),
];

/// Annotated ground-truth object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub bbox: Box7<f64>,
    pub class: ObjectClass,
    /// Height of the 2D image box in pixels.
    pub height_px: f64,
    /// 0 fully visible .. 3 unknown.
    pub occlusion: i32,
    pub truncation: f64,
}

impl GtObject {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.truncation) || !(0..=3).contains(&self.occlusion) {
            return Err(Error::Domain(format!(
                "truncation {} / occlusion {} out of range",
                self.truncation, self.occlusion
            )));
        }
        self.bbox.validate()
    }
}

/// Strictest level whose criteria the object satisfies.
pub fn difficulty_of(gt: &GtObject) -> Difficulty {
    CRITERIA
        .iter()
        .find(|(_, h, occ, tr)| gt.height_px >= *h && gt.occlusion <= *occ && gt.truncation <= *tr)
        .map(|c| c.0)
        .unwrap_or(Difficulty::Ignored)
}

/// Ground truth and detections of one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub gts: Vec<GtObject>,
    pub dets: Vec<Detection<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    Bev,
    ThreeD,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bev => "bev",
            Self::ThreeD => "3d",
        }
    }

    pub fn iou(self, a: &Box7<f64>, b: &Box7<f64>) -> f64 {
        match self {
            Self::Bev => iou_bev(a, b),
            Self::ThreeD => iou_3d(a, b),
        }
    }
}

/// Result of matching one frame for one class and level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    /// `(score, is_true_positive)` for counted detections, in score order.
    pub outcomes: Vec<(f64, bool)>,
    /// Per ground truth (frame order): whether some detection claimed it.
    pub gt_matched: Vec<bool>,
    /// Ground truths of the class that count at this level.
    pub num_gt: usize,
}

impl FrameMatch {
    pub fn tp(&self) -> usize {
        self.outcomes.iter().filter(|o| o.1).count()
    }

    pub fn fp(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.1).count()
    }
}

/// Greedy matching in descending score order (ties by input index). Each
/// detection claims the unmatched same-class ground truth of highest IoU if
/// that IoU reaches `iou_min`; otherwise it is a false positive.
pub fn match_frame<F>(gts: &[GtObject], dets: &[Detection<f64>], class: ObjectClass, iou_fn: F, iou_min: f64, level: Difficulty) -> FrameMatch
where
    F: Fn(&Box7<f64>, &Box7<f64>) -> f64,
{
    let counted: Vec<bool> = gts
        .iter()
        .map(|g| g.class == class && difficulty_of(g) <= level && level != Difficulty::Ignored)
        .collect();
    let mut m = FrameMatch {
        outcomes: Vec::new(),
        gt_matched: vec![false; gts.len()],
        num_gt: counted.iter().filter(|c| **c).count(),
    };
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    for di in order {
        let d = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if g.class != class || m.gt_matched[gi] {
                continue;
            }
            let iou = iou_fn(&d.bbox, &g.bbox);
            if iou >= iou_min && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                m.gt_matched[gi] = true;
                if counted[gi] {
                    m.outcomes.push((d.score, true));
                }
            }
            None => m.outcomes.push((d.score, false)),
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrSample {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// PR curve with one sample per distinct score threshold.
pub fn pr_curve(outcomes: &[(f64, bool)], num_gt: usize) -> Vec<PrSample> {
    if num_gt == 0 {
        return Vec::new();
    }
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(PrSample {
            score: s,
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApMode {
    Ap11,
    Ap40,
}

impl ApMode {
    pub fn recall_positions(self) -> Vec<f64> {
        match self {
            Self::Ap11 => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Self::Ap40 => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

/// Mean interpolated precision, where the interpolated precision at `r` is
/// the maximum precision over samples with recall at least `r`.
pub fn ap(pr: &[PrSample], mode: ApMode) -> f64 {
    let positions = mode.recall_positions();
    let n = positions.len() as f64;
    positions
        .into_iter()
        .map(|r| {
            pr.iter()
                .filter(|s| s.recall >= r)
                .map(|s| s.precision)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Minimum IoU for a match, per class.
    pub iou_min: BTreeMap<ObjectClass, f64>,
    pub metrics: Vec<Metric>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_min: BTreeMap::from([
                (ObjectClass::Car, 0.7),
                (ObjectClass::Pedestrian, 0.5),
                (ObjectClass::Cyclist, 0.5),
            ]),
            metrics: vec![Metric::ThreeD, Metric::Bev],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_min.values().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("eval IoU minimums must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub ap11: f64,
    pub ap40: f64,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub pr: Vec<PrSample>,
}

pub type ApKey = (ObjectClass, Difficulty, Metric);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApResult {
    pub entries: BTreeMap<ApKey, ApEntry>,
}

impl ApResult {
    pub fn get(&self, class: ObjectClass, level: Difficulty, metric: Metric) -> Option<&ApEntry> {
        self.entries.get(&(class, level, metric))
    }
}

/// AP for every (class, level, metric) with at least one counted ground
/// truth. Classes appear if they have a configured IoU minimum and occur in
/// the ground truth.
pub fn evaluate(records: &[EvalRecord], config: &EvalConfig) -> Result<ApResult> {
    config.validate()?;
    for r in records {
        for g in &r.gts {
            g.validate()?;
        }
    }
    let mut classes: Vec<ObjectClass> = records
        .iter()
        .flat_map(|r| r.gts.iter().map(|g| g.class))
        .filter(|c| config.iou_min.contains_key(c))
        .collect();
    classes.sort();
    classes.dedup();
    let mut result = ApResult::default();
    for &class in &classes {
        let iou_min = config.iou_min[&class];
        for &metric in &config.metrics {
            for level in Difficulty::LEVELS {
                let per_frame: Vec<FrameMatch> = records
                    .par_iter()
                    .map(|r| match_frame(&r.gts, &r.dets, class, |a, b| metric.iou(a, b), iou_min, level))
                    .collect();
                let num_gt: usize = per_frame.iter().map(|m| m.num_gt).sum();
                if num_gt == 0 {
                    continue;
                }
                let outcomes: Vec<(f64, bool)> = per_frame.iter().flat_map(|m| m.outcomes.iter().copied()).collect();
                let pr = pr_curve(&outcomes, num_gt);
                let tp = outcomes.iter().filter(|o| o.1).count();
                result.entries.insert(
                    (class, level, metric),
                    ApEntry {
                        ap11: ap(&pr, ApMode::Ap11),
                        ap40: ap(&pr, ApMode::Ap40),
                        num_gt,
                        tp,
                        fp: outcomes.len() - tp,
                        pr,
                    },
                );
            }
        }
    }
    Ok(result)
}
