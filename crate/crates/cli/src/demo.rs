//! End-to-end run on synthetic frames: generate, crop, voxelize, compute
//! attention targets, perturb ground truth into detections, rescore with the
//! attention branch, filter, suppress and evaluate.

use std::path::Path;

use pvdet::attention::{adjust_confidence, attention_targets};
use pvdet::eval::{evaluate, EvalRecord};
use pvdet::geometry::point_in_box;
use pvdet::kitti::{format_label_file, frustum_filter, Calibration};
use pvdet::postprocess::{nms_3d, score_filter, top_k, Detection};
use pvdet::synth::{generate, perturb_detections, PerturbConfig};
use pvdet::voxel::{crop_to_range, voxelize_parallel};
use pvdet::{Box7, Point};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::commands::synth_config;
use crate::config::PipelineConfig;
use crate::dataset::{box_label, frame_seed, synthetic_gt, LABELS};
use crate::error::{CliError, CliResult};
use crate::report::{metrics_json, pr_csv};

/// Salt separating the detection noise stream from scene generation.
const PERTURB_SALT: u64 = 0x5045_5254;

struct FrameOutcome {
    stats: Value,
    record: EvalRecord,
}

/// Attention of each detection center against the ground-truth boxes.
fn center_attention(dets: &[Detection<f64>], gts: &[Box7<f64>]) -> Vec<f64> {
    let centers: Vec<Point<f64>> = dets
        .iter()
        .map(|d| Point::new(d.bbox.cx, d.bbox.cy, d.bbox.cz, 0.0))
        .collect();
    attention_targets(&centers, gts)
}

fn run_frame(cfg: &PipelineConfig, calib: &Calibration, index: usize, noise: f64) -> CliResult<FrameOutcome> {
    let seed = frame_seed(cfg.seed, index as u64);
    let synth = generate(&synth_config(cfg, seed))?;
    let scene = synth.scene;

    let visible = frustum_filter(&scene.points, calib, cfg.image_dims);
    let cropped = crop_to_range(&visible, &cfg.voxel);
    let grid = voxelize_parallel(&cropped, &cfg.voxel, 16_384)?;
    if grid.total_points() != cropped.len() {
        return Err(CliError::Invariant(format!(
            "frame {index}: voxel counts {} != cropped points {}",
            grid.total_points(),
            cropped.len()
        )));
    }

    let gts: Vec<_> = scene
        .boxes
        .iter()
        .filter_map(|b| synthetic_gt(b, calib, cfg.image_dims))
        .collect();
    let gt_boxes: Vec<Box7<f64>> = gts.iter().map(|g| g.bbox).collect();

    let att = attention_targets(&cropped, &gt_boxes);
    let fg: Vec<f64> = cropped
        .iter()
        .zip(&att)
        .filter(|(p, _)| gt_boxes.iter().any(|b| point_in_box(p.pos(), b)))
        .map(|(_, a)| *a)
        .collect();

    let mut perturb = PerturbConfig::with_noise(noise);
    perturb.ghost_area = [
        cfg.voxel.range_min[0],
        cfg.voxel.range_min[1],
        cfg.voxel.range_max[0],
        cfg.voxel.range_max[1],
    ];
    let raw = perturb_detections(&gt_boxes, &perturb, frame_seed(seed, PERTURB_SALT))?;
    let conf = center_attention(&raw, &gt_boxes);
    let rescored: Vec<Detection<f64>> = raw
        .iter()
        .zip(&conf)
        .map(|(d, c)| Ok(Detection::new(d.bbox, d.class, adjust_confidence(*c, d.score)?)?))
        .collect::<CliResult<_>>()?;

    let kept = score_filter(&rescored, &cfg.score_thresholds)?;
    let suppressed = nms_3d(&kept, cfg.nms_threshold)?;
    for (i, a) in suppressed.iter().enumerate() {
        for b in &suppressed[i + 1..] {
            if a.class == b.class && pvdet::geometry::iou_3d(&a.bbox, &b.bbox) > cfg.nms_threshold {
                return Err(CliError::Invariant(format!("frame {index}: overlapping detections survived NMS")));
            }
        }
    }
    let dets = top_k(&suppressed, cfg.top_k);

    let mean_fg = if fg.is_empty() { 0.0 } else { fg.iter().sum::<f64>() / fg.len() as f64 };
    let stats = json!({
        "frame": index,
        "points": scene.points.len(),
        "in_view": cropped.len(),
        "voxels": grid.len(),
        "objects": scene.boxes.len(),
        "placement_failures": synth.placement_failures,
        "gt": gts.len(),
        "foreground_points": fg.len(),
        "mean_foreground_attention": mean_fg,
        "raw_detections": raw.len(),
        "after_score_filter": kept.len(),
        "after_nms": suppressed.len(),
        "detections": dets.len(),
    });
    Ok(FrameOutcome {
        stats,
        record: EvalRecord { gts, dets },
    })
}

/// Ground-truth labels under `out/gt/label_2` and scored detections under
/// `out/det`, both in KITTI camera format.
fn write_kitti(out: &Path, calib: &Calibration, image_dims: [f64; 2], records: &[EvalRecord]) -> CliResult<()> {
    let gt_dir = out.join("gt").join(LABELS);
    let det_dir = out.join("det");
    std::fs::create_dir_all(&gt_dir)?;
    std::fs::create_dir_all(&det_dir)?;
    for (i, r) in records.iter().enumerate() {
        let gts: Vec<_> = r
            .gts
            .iter()
            .map(|g| {
                let mut l = box_label(&g.bbox, calib, image_dims);
                l.occlusion = g.occlusion;
                l
            })
            .collect();
        let dets: Vec<_> = r
            .dets
            .iter()
            .map(|d| {
                let mut l = box_label(&d.bbox.with_class(d.class), calib, image_dims);
                l.score = Some(d.score);
                l
            })
            .collect();
        std::fs::write(gt_dir.join(format!("{i:06}.txt")), format_label_file(&gts))?;
        std::fs::write(det_dir.join(format!("{i:06}.txt")), format_label_file(&dets))?;
    }
    Ok(())
}

/// Runs the synthetic pipeline over `frames` frames. The report carries no
/// timing, so equal inputs give byte-identical output at any thread count.
pub fn run(cfg: &PipelineConfig, frames: usize, noise: f64) -> CliResult<Value> {
    run_with_output(cfg, frames, noise, None)
}

/// As [`run`], additionally writing KITTI label files and the PR curves
/// under `out` when given.
pub fn run_with_output(cfg: &PipelineConfig, frames: usize, noise: f64, out: Option<&Path>) -> CliResult<Value> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::Usage("--noise must be a finite non-negative number".into()));
    }
    let calib = Calibration::canonical();
    let outcomes: Vec<FrameOutcome> = (0..frames)
        .into_par_iter()
        .map(|i| run_frame(cfg, &calib, i, noise))
        .collect::<CliResult<_>>()?;
    let records: Vec<EvalRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let res = evaluate(&records, &cfg.eval)?;
    if let Some(dir) = out {
        write_kitti(dir, &calib, cfg.image_dims, &records)?;
        std::fs::write(dir.join("pr.csv"), pr_csv(&res))?;
    }
    Ok(json!({
        "command": "demo",
        "config": cfg,
        "frames": frames,
        "noise": noise,
        "per_frame": outcomes.into_iter().map(|o| o.stats).collect::<Vec<_>>(),
        "metrics": metrics_json(&res),
    }))
}
