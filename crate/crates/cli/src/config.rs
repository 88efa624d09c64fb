use std::collections::BTreeMap;
use std::path::Path;

use pvdet::augment::GlobalAugmentConfig;
use pvdet::eval::EvalConfig;
use pvdet::losses::LossWeights;
use pvdet::postprocess::RoiGridSpec;
use pvdet::targets::AnchorConfig;
use pvdet::voxel::VoxelConfig;
use pvdet::ObjectClass;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    pub flip: bool,
    pub rotate: bool,
    pub scale: bool,
    pub gt_sampling: bool,
    /// Boxes with fewer inner points are dropped after augmentation.
    pub min_points: usize,
    pub global: GlobalAugmentConfig,
    /// Per-class totals that ground-truth sampling fills up to.
    pub sample_targets: BTreeMap<ObjectClass, usize>,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            flip: true,
            rotate: true,
            scale: true,
            gt_sampling: true,
            min_points: 5,
            global: GlobalAugmentConfig::default(),
            sample_targets: BTreeMap::from([
                (ObjectClass::Car, 15),
                (ObjectClass::Pedestrian, 10),
                (ObjectClass::Cyclist, 10),
            ]),
        }
    }
}

impl AugmentSettings {
    /// The global augmentation with disabled stages neutralized.
    pub fn effective_global(&self) -> GlobalAugmentConfig {
        GlobalAugmentConfig {
            flip_probability: if self.flip { self.global.flip_probability } else { 0.0 },
            max_rotation: if self.rotate { self.global.max_rotation } else { 0.0 },
            scale_range: if self.scale { self.global.scale_range } else { [1.0, 1.0] },
        }
    }
}

/// Every tunable of the pipeline in one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub voxel: VoxelConfig<f64>,
    pub anchors: AnchorConfig,
    pub roi_grid: RoiGridSpec,
    pub score_thresholds: BTreeMap<ObjectClass, f64>,
    pub nms_threshold: f64,
    pub top_k: usize,
    pub eval: EvalConfig,
    pub loss_weights: LossWeights,
    pub augment: AugmentSettings,
    /// Camera image `(width, height)` in pixels for projection and cropping.
    pub image_dims: [f64; 2],
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel: VoxelConfig::default(),
            anchors: AnchorConfig::default(),
            roi_grid: RoiGridSpec::default(),
            score_thresholds: BTreeMap::from([
                (ObjectClass::Car, 0.7),
                (ObjectClass::Pedestrian, 0.3),
                (ObjectClass::Cyclist, 0.3),
            ]),
            nms_threshold: 0.1,
            top_k: 128,
            eval: EvalConfig::default(),
            loss_weights: LossWeights::default(),
            augment: AugmentSettings::default(),
            image_dims: [1242.0, 375.0],
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.voxel.validate()?;
        self.anchors.validate()?;
        self.roi_grid.validate()?;
        self.eval.validate()?;
        self.loss_weights.validate()?;
        self.augment.global.validate()?;
        let bad = |m: &str| Err(CliError::Invariant(m.to_string()));
        if self.score_thresholds.values().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("score thresholds must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return bad("nms_threshold must lie in [0,1]");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if self.image_dims.iter().any(|d| !(*d > 0.0)) {
            return bad("image_dims must be positive");
        }
        for class in ObjectClass::ALL {
            if !self.score_thresholds.contains_key(&class) || !self.eval.iou_min.contains_key(&class) {
                return Err(CliError::Invariant(format!("missing threshold for {class}")));
            }
        }
        Ok(())
    }
}
