use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pvdet::attention::attention_targets;
use pvdet::augment::{global_augment, gt_sample, min_points_filter, GtDatabase, GtSampleOptions, Scene};
use pvdet::eval::{evaluate, EvalRecord};
use pvdet::geometry::point_in_box;
use pvdet::kitti::Calibration;
use pvdet::postprocess::{nms_3d, score_filter, top_k, Detection};
use pvdet::synth::{generate, SynthConfig};
use pvdet::targets::{anchor_grid, assign_anchor_labels, assign_point_targets, targets_to_csv, AnchorLabel};
use pvdet::voxel::{downsampled_dims, voxelize_parallel};
use pvdet::{Box7, ObjectClass};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::dataset::{self, frame_seed, id_key};
use crate::error::{CliError, CliResult};
use crate::report::{metrics_json, pr_csv, write_json};

pub const DB_POINTS: &str = "gt_database.bin";
pub const DB_INDEX: &str = "gt_database.csv";

pub fn voxelize_cmd(cfg: &PipelineConfig, data: &Path, out: &Path) -> CliResult<Value> {
    let ids = dataset::velodyne_ids(data)?;
    std::fs::create_dir_all(out)?;
    let frames: Vec<Value> = ids
        .par_iter()
        .map(|id| {
            let points = dataset::load_points(data, id)?;
            let grid = voxelize_parallel(&points, &cfg.voxel, 16_384)?;
            let in_range = points
                .iter()
                .filter(|p| cfg.voxel.contains([p.x, p.y, p.z]))
                .count();
            if grid.total_points() != in_range {
                return Err(CliError::Invariant(format!(
                    "frame {id}: voxel counts {} != in-range points {in_range}",
                    grid.total_points()
                )));
            }
            std::fs::write(out.join(format!("{id}.voxels.bin")), grid.to_bytes())?;
            let retained: usize = grid.cells().map(|(_, c)| c.points.len()).sum();
            Ok(json!({
                "frame": id,
                "points": points.len(),
                "in_range": in_range,
                "voxels": grid.len(),
                "retained": retained,
                "bev_cells": grid.bev_cells().len(),
            }))
        })
        .collect::<CliResult<_>>()?;
    let report = json!({
        "command": "voxelize",
        "config": cfg,
        "grid_dims": pvdet::voxel::grid_dims(&cfg.voxel)?,
        "frames": frames,
    });
    write_json(&out.join("voxelize_report.json"), &report)?;
    Ok(report)
}

struct LabeledFrame {
    points: Vec<pvdet::Point<f64>>,
    boxes: Vec<Box7<f64>>,
    calib: Calibration,
}

fn load_labeled(data: &Path, id: &str) -> CliResult<LabeledFrame> {
    let calib = dataset::load_calib(data, id)?;
    let labels = dataset::load_labels(data, id)?;
    Ok(LabeledFrame {
        points: dataset::load_points(data, id)?,
        boxes: dataset::label_boxes(&labels, &calib)?,
        calib,
    })
}

pub fn attention_cmd(cfg: &PipelineConfig, data: &Path, out: &Path) -> CliResult<Value> {
    let ids = dataset::velodyne_ids(data)?;
    std::fs::create_dir_all(out)?;
    let frames: Vec<Value> = ids
        .par_iter()
        .map(|id| {
            let f = load_labeled(data, id)?;
            let att = attention_targets(&f.points, &f.boxes);
            let mut csv = String::from("point,x,y,z,attention\n");
            for (i, (p, a)) in f.points.iter().zip(&att).enumerate() {
                let _ = writeln!(csv, "{i},{},{},{},{a}", p.x, p.y, p.z);
            }
            std::fs::write(out.join(format!("{id}.attention.csv")), csv)?;
            let fg: Vec<f64> = f
                .points
                .iter()
                .zip(&att)
                .filter(|(p, _)| f.boxes.iter().any(|b| point_in_box(p.pos(), b)))
                .map(|(_, a)| *a)
                .collect();
            let mean = if fg.is_empty() { 0.0 } else { fg.iter().sum::<f64>() / fg.len() as f64 };
            Ok(json!({
                "frame": id,
                "points": f.points.len(),
                "boxes": f.boxes.len(),
                "foreground_points": fg.len(),
                "mean_foreground_attention": mean,
            }))
        })
        .collect::<CliResult<_>>()?;
    let report = json!({"command": "attention", "config": cfg, "frames": frames});
    write_json(&out.join("attention_report.json"), &report)?;
    Ok(report)
}

pub fn targets_cmd(cfg: &PipelineConfig, data: &Path, out: &Path) -> CliResult<Value> {
    let ids = dataset::velodyne_ids(data)?;
    std::fs::create_dir_all(out)?;
    let dims = pvdet::voxel::grid_dims(&cfg.voxel)?;
    let bev = downsampled_dims(dims, cfg.anchors.stride)?;
    let anchors = anchor_grid::<f64>([bev[0], bev[1]], &cfg.anchors)?;
    let frames: Vec<Value> = ids
        .iter()
        .map(|id| {
            let f = load_labeled(data, id)?;
            let t = assign_point_targets(&f.points, &f.boxes, &cfg.anchors)?;
            std::fs::write(out.join(format!("{id}.targets.csv")), targets_to_csv(&t))?;
            let labels = assign_anchor_labels(&anchors, &f.boxes, &cfg.anchors);
            let pos = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
            let neg = labels.iter().filter(|l| matches!(l, AnchorLabel::Negative)).count();
            Ok(json!({
                "frame": id,
                "points": f.points.len(),
                "foreground_points": t.iter().filter(|x| x.gt_index.is_some()).count(),
                "positive_anchors": pos,
                "negative_anchors": neg,
            }))
        })
        .collect::<CliResult<_>>()?;
    let report = json!({
        "command": "targets",
        "config": cfg,
        "anchor_map": [bev[0], bev[1]],
        "anchors": anchors.len(),
        "frames": frames,
    });
    write_json(&out.join("targets_report.json"), &report)?;
    Ok(report)
}

pub fn load_database(dir: &Path) -> CliResult<GtDatabase<f64>> {
    let blob = std::fs::read(dir.join(DB_POINTS))?;
    let index = std::fs::read_to_string(dir.join(DB_INDEX))?;
    Ok(GtDatabase::from_files(&blob, &index)?)
}

pub fn save_database(dir: &Path, db: &GtDatabase<f64>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let (blob, index) = db.to_files();
    std::fs::write(dir.join(DB_POINTS), blob)?;
    std::fs::write(dir.join(DB_INDEX), index)?;
    Ok(())
}

pub fn augment_cmd(cfg: &PipelineConfig, data: &Path, out: &Path, db_dir: Option<&Path>) -> CliResult<Value> {
    let ids = dataset::velodyne_ids(data)?;
    let db = match db_dir {
        Some(d) if cfg.augment.gt_sampling => Some(load_database(d)?),
        _ => None,
    };
    let global = cfg.augment.effective_global();
    let frames: Vec<Value> = ids
        .par_iter()
        .map(|id| {
            let f = load_labeled(data, id)?;
            let seed = frame_seed(cfg.seed, id_key(id));
            let mut scene = Scene::new(f.points, f.boxes);
            let before = scene.boxes.len();
            if let Some(db) = &db {
                scene = gt_sample(&scene, db, &cfg.augment.sample_targets, seed, GtSampleOptions::default());
            }
            let sampled = scene.boxes.len() - before;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scene = global_augment(&scene, &global, &mut rng)?;
            scene = min_points_filter(&scene, cfg.augment.min_points);
            let labels: Vec<_> = scene
                .boxes
                .iter()
                .map(|b| dataset::box_label(b, &f.calib, cfg.image_dims))
                .collect();
            dataset::write_frame(out, id, &scene.points, &labels, &f.calib)?;
            Ok(json!({
                "frame": id,
                "boxes_in": before,
                "sampled": sampled,
                "boxes_out": scene.boxes.len(),
                "points_out": scene.points.len(),
            }))
        })
        .collect::<CliResult<_>>()?;
    let report = json!({"command": "augment", "config": cfg, "frames": frames});
    write_json(&out.join("augment_report.json"), &report)?;
    Ok(report)
}

const NMS_HEADER: &str = "frame,class,cx,cy,cz,l,w,h,yaw,score";

fn parse_detection_csv(text: &str) -> CliResult<Vec<(String, Detection<f64>)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == NMS_HEADER => {}
        _ => return Err(CliError::Data(format!("detection CSV must start with '{NMS_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(CliError::Data(format!("line {}: expected 10 fields", n + 2)));
        }
        let class = ObjectClass::from_name(f[1])
            .ok_or_else(|| CliError::Data(format!("line {}: unknown class '{}'", n + 2, f[1])))?;
        let v: Vec<f64> = f[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| CliError::Data(format!("line {}: bad number '{s}'", n + 2)))
            })
            .collect::<CliResult<_>>()?;
        let b = Box7::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])?.with_class(class);
        out.push((f[0].to_string(), Detection::new(b, class, v[7])?));
    }
    Ok(out)
}

pub fn nms_cmd(
    cfg: &PipelineConfig,
    input: &Path,
    out: &Path,
    apply_score_filter: bool,
) -> CliResult<Value> {
    let text = std::fs::read_to_string(input)?;
    let rows = parse_detection_csv(&text)?;
    let mut frames: BTreeMap<String, Vec<Detection<f64>>> = BTreeMap::new();
    for (f, d) in rows {
        frames.entry(f).or_default().push(d);
    }
    let frames: Vec<(String, Vec<Detection<f64>>)> = frames.into_iter().collect();
    let kept: Vec<(usize, Vec<Detection<f64>>)> = frames
        .par_iter()
        .map(|(_, dets)| {
            let filtered = if apply_score_filter {
                score_filter(dets, &cfg.score_thresholds)?
            } else {
                dets.clone()
            };
            let n = filtered.len();
            Ok((n, top_k(&nms_3d(&filtered, cfg.nms_threshold)?, cfg.top_k)))
        })
        .collect::<CliResult<_>>()?;
    let mut csv = format!("{NMS_HEADER}\n");
    let mut per_frame = Vec::new();
    for ((frame, dets), (filtered, k)) in frames.iter().zip(&kept) {
        for d in k {
            let b = &d.bbox;
            let _ = writeln!(
                csv,
                "{frame},{},{},{},{},{},{},{},{},{}",
                d.class.name(),
                b.cx,
                b.cy,
                b.cz,
                b.l,
                b.w,
                b.h,
                b.yaw,
                d.score
            );
        }
        per_frame.push(json!({"frame": frame, "input": dets.len(), "after_filter": filtered, "kept": k.len()}));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, csv)?;
    Ok(json!({"command": "nms", "config": cfg, "frames": per_frame}))
}

pub fn eval_cmd(
    cfg: &PipelineConfig,
    gt: &Path,
    det: &Path,
    calib_dir: Option<&Path>,
    pr_out: Option<&Path>,
) -> CliResult<Value> {
    let ids = dataset::label_ids(gt)?;
    dataset::require_dir(det)?;
    let calib_root = calib_dir.unwrap_or(gt);
    let records: Vec<EvalRecord> = ids
        .par_iter()
        .map(|id| {
            let calib = dataset::load_calib(calib_root, id)?;
            let gts = dataset::gt_objects(&dataset::load_labels(gt, id)?, &calib)?;
            let dets = dataset::detections(&dataset::load_labels(det, id)?, &calib)?;
            Ok(EvalRecord { gts, dets })
        })
        .collect::<CliResult<_>>()?;
    let res = evaluate(&records, &cfg.eval)?;
    if let Some(p) = pr_out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, pr_csv(&res))?;
    }
    Ok(json!({
        "command": "eval",
        "config": cfg,
        "frames": ids.len(),
        "metrics": metrics_json(&res),
    }))
}

/// Synthetic config for one frame, placed inside the voxel range.
pub fn synth_config(cfg: &PipelineConfig, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        placement_min: [cfg.voxel.range_min[0], cfg.voxel.range_min[1]],
        placement_max: [cfg.voxel.range_max[0], cfg.voxel.range_max[1]],
        ..SynthConfig::default()
    }
}

pub fn synth_cmd(cfg: &PipelineConfig, out: &Path, frames: usize, db_out: Option<&Path>) -> CliResult<Value> {
    let calib = Calibration::canonical();
    let scenes: Vec<(String, Scene<f64>, usize)> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let s = generate(&synth_config(cfg, frame_seed(cfg.seed, i as u64)))?;
            let id = format!("{i:06}");
            let labels: Vec<_> = s
                .scene
                .boxes
                .iter()
                .map(|b| dataset::box_label(b, &calib, cfg.image_dims))
                .collect();
            dataset::write_frame(out, &id, &s.scene.points, &labels, &calib)?;
            Ok((id, s.scene, s.placement_failures))
        })
        .collect::<CliResult<_>>()?;
    if let Some(dir) = db_out {
        let mut db = GtDatabase::default();
        for (_, scene, _) in &scenes {
            db.add_scene(scene)?;
        }
        save_database(dir, &db)?;
    }
    let report = json!({
        "command": "synth",
        "config": cfg,
        "frames": scenes.iter().map(|(id, s, fail)| json!({
            "frame": id,
            "points": s.points.len(),
            "boxes": s.boxes.len(),
            "placement_failures": fail,
        })).collect::<Vec<_>>(),
    });
    write_json(&out.join("synth_report.json"), &report)?;
    Ok(report)
}
