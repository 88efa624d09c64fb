//! KITTI-style directory layout: `velodyne/ID.bin`, `label_2/ID.txt`,
//! `calib/ID.txt`.

use std::path::{Path, PathBuf};

use pvdet::eval::GtObject;
use pvdet::kitti::{
    format_label_file, label_to_lidar_box, lidar_box_to_label, list_frames, parse_label_file, project_box,
    read_calibration_file, read_velodyne_file, write_velodyne, Calibration, KittiLabel,
};
use pvdet::postprocess::Detection;
use pvdet::{Box7, Point};

use crate::error::{CliError, CliResult};

pub const VELODYNE: &str = "velodyne";
pub const LABELS: &str = "label_2";
pub const CALIB: &str = "calib";

/// `root/name` when it exists, otherwise `root` itself.
pub fn subdir(root: &Path, name: &str) -> PathBuf {
    let p = root.join(name);
    if p.is_dir() {
        p
    } else {
        root.to_path_buf()
    }
}

pub fn require_dir(p: &Path) -> CliResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} is not a directory", p.display())))
    }
}

pub fn velodyne_ids(root: &Path) -> CliResult<Vec<String>> {
    require_dir(root)?;
    Ok(list_frames(&subdir(root, VELODYNE), "bin")?)
}

pub fn label_ids(root: &Path) -> CliResult<Vec<String>> {
    require_dir(root)?;
    Ok(list_frames(&subdir(root, LABELS), "txt")?)
}

/// Per-frame calibration if `calib/ID.txt` exists, else the canonical one.
pub fn load_calib(root: &Path, id: &str) -> CliResult<Calibration> {
    let p = root.join(CALIB).join(format!("{id}.txt"));
    if p.is_file() {
        read_calibration_file(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    } else {
        Ok(Calibration::canonical())
    }
}

pub fn load_points(root: &Path, id: &str) -> CliResult<Vec<Point<f64>>> {
    let p = subdir(root, VELODYNE).join(format!("{id}.bin"));
    let scan = read_velodyne_file(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    Ok(scan.points.iter().map(|q| q.cast()).collect())
}

/// Labels of a frame; a missing file means no objects.
pub fn load_labels(root: &Path, id: &str) -> CliResult<Vec<KittiLabel>> {
    let p = subdir(root, LABELS).join(format!("{id}.txt"));
    if !p.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&p)?;
    parse_label_file(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

/// LiDAR boxes of the evaluable labels.
pub fn label_boxes(labels: &[KittiLabel], calib: &Calibration) -> CliResult<Vec<Box7<f64>>> {
    labels
        .iter()
        .filter(|l| l.is_evaluable())
        .map(|l| Ok(label_to_lidar_box(l, calib)?))
        .collect()
}

pub fn gt_objects(labels: &[KittiLabel], calib: &Calibration) -> CliResult<Vec<GtObject>> {
    labels
        .iter()
        .filter_map(|l| l.class().map(|c| (l, c)))
        .map(|(l, class)| {
            let g = GtObject {
                bbox: label_to_lidar_box(l, calib)?,
                class,
                height_px: l.bbox_height(),
                occlusion: l.occlusion,
                truncation: l.truncation,
            };
            g.validate()?;
            Ok(g)
        })
        .collect()
}

pub fn detections(labels: &[KittiLabel], calib: &Calibration) -> CliResult<Vec<Detection<f64>>> {
    labels
        .iter()
        .filter_map(|l| l.class().map(|c| (l, c)))
        .map(|(l, class)| {
            let score = l
                .score
                .ok_or_else(|| CliError::Data(format!("detection of {} has no score column", l.kind)))?;
            Ok(Detection::new(label_to_lidar_box(l, calib)?, class, score)?)
        })
        .collect()
}

/// Camera-frame label for a LiDAR box, with 2D box and truncation from the
/// projection into an image of `image_dims`.
pub fn box_label(b: &Box7<f64>, calib: &Calibration, image_dims: [f64; 2]) -> KittiLabel {
    let kind = b.class.map(|c| c.name()).unwrap_or("DontCare");
    let mut l = lidar_box_to_label(b, kind, calib, Some(image_dims));
    if let Some(p) = project_box(b, calib, Some(image_dims)) {
        l.truncation = p.truncation;
    }
    l
}

/// Ground truth as the evaluator sees a generated box (occlusion 0).
pub fn synthetic_gt(b: &Box7<f64>, calib: &Calibration, image_dims: [f64; 2]) -> Option<GtObject> {
    let p = project_box(b, calib, Some(image_dims))?;
    Some(GtObject {
        bbox: *b,
        class: b.class?,
        height_px: p.clipped[3] - p.clipped[1],
        occlusion: 0,
        truncation: p.truncation,
    })
}

pub fn write_frame(
    root: &Path,
    id: &str,
    points: &[Point<f64>],
    labels: &[KittiLabel],
    calib: &Calibration,
) -> CliResult<()> {
    for d in [VELODYNE, LABELS, CALIB] {
        std::fs::create_dir_all(root.join(d))?;
    }
    let pts: Vec<Point<f32>> = points.iter().map(|p| p.cast()).collect();
    std::fs::write(root.join(VELODYNE).join(format!("{id}.bin")), write_velodyne(&pts))?;
    std::fs::write(root.join(LABELS).join(format!("{id}.txt")), format_label_file(labels))?;
    std::fs::write(root.join(CALIB).join(format!("{id}.txt")), calib.to_text())?;
    Ok(())
}

/// Independent per-frame seed derived from the run seed and a frame key.
pub fn frame_seed(seed: u64, key: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ key.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable key for a frame id string (FNV-1a).
pub fn id_key(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
