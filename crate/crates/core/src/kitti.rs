//! KITTI object-benchmark artifacts: velodyne scans, label files and
//! calibration files, plus camera <-> LiDAR box conversion and the image
//! frustum filter.
//!
//! Heading convention: a label's `rotation_y` turns about the camera's
//! downward `y` axis starting from camera `+x`. With the usual
//! velodyne-to-camera axis permutation (`x_cam = -y_lidar`,
//! `y_cam = -z_lidar`, `z_cam = x_lidar`) this gives
//! `yaw = -rotation_y - pi/2`. For example `rotation_y = 0` (object facing
//! camera right, i.e. LiDAR `-y`) maps to `yaw = -pi/2`, and
//! `rotation_y = -pi/2` (facing forward, LiDAR `+x`) maps to `yaw = 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{box_corners, Box7, ObjectClass, Point, Vec3};
use crate::scalar::wrap_angle;

/// Decoded velodyne scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VelodyneScan {
    pub points: Vec<Point<f32>>,
    /// Points skipped because a coordinate was NaN or infinite.
    pub dropped_non_finite: usize,
}

/// Decodes little-endian `f32 x 4` records.
pub fn read_velodyne(bytes: &[u8]) -> Result<VelodyneScan> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "velodyne blob length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut scan = VelodyneScan {
        points: Vec::with_capacity(bytes.len() / 16),
        dropped_non_finite: 0,
    };
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point::new(f(0), f(1), f(2), f(3));
        if [p.x, p.y, p.z, p.r].iter().all(|v| v.is_finite()) {
            scan.points.push(p);
        } else {
            scan.dropped_non_finite += 1;
        }
    }
    Ok(scan)
}

pub fn write_velodyne(points: &[Point<f32>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_velodyne_file(path: &Path) -> Result<VelodyneScan> {
    read_velodyne(&std::fs::read(path)?)
}

/// One object line of a KITTI label file.
#[derive(Clone, Debug, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// `(x1, y1, x2, y2)` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom center in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn class(&self) -> Option<ObjectClass> {
        ObjectClass::from_name(&self.kind)
    }

    /// `DontCare` regions and unknown types are never evaluated.
    pub fn is_evaluable(&self) -> bool {
        self.class().is_some()
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

pub fn parse_label_line(line: &str) -> Result<KittiLabel> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(Error::Format(format!(
            "label line has {} fields, expected 15 or 16",
            f.len()
        )));
    }
    let num = |i: usize| -> Result<f64> {
        f[i].parse::<f64>()
            .map_err(|_| Error::Format(format!("label field {} '{}' is not a number", i + 1, f[i])))
    };
    let occlusion = f[2]
        .parse::<f64>()
        .ok()
        .filter(|v| v.fract() == 0.0)
        .map(|v| v as i32)
        .ok_or_else(|| Error::Format(format!("label occlusion '{}' is not an integer", f[2])))?;
    Ok(KittiLabel {
        kind: f[0].to_string(),
        truncation: num(1)?,
        occlusion,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if f.len() == 16 { Some(num(15)?) } else { None },
    })
}

/// Formats with 2 decimals for truncation and score and 6 for geometry.
pub fn format_label(l: &KittiLabel) -> String {
    let mut s = format!("{} {:.2} {} {:.6}", l.kind, l.truncation, l.occlusion, l.alpha);
    for v in l.bbox.iter().chain(&l.dimensions).chain(&l.location) {
        let _ = write!(s, " {v:.6}");
    }
    let _ = write!(s, " {:.6}", l.rotation_y);
    if let Some(sc) = l.score {
        let _ = write!(s, " {sc:.2}");
    }
    s
}

pub fn parse_label_file(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_label_line)
        .collect()
}

pub fn format_label_file(labels: &[KittiLabel]) -> String {
    labels.iter().map(|l| format_label(l) + "\n").collect()
}

type Mat3 = [[f64; 3]; 3];
type Mat4 = [[f64; 4]; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: Mat3,
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut o = [[0.0; 4]; 4];
    for (i, row) in o.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

fn mat4_apply(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
}

/// Inverse of a rigid-or-affine 4x4 with last row `(0, 0, 0, 1)`.
fn affine_inverse(m: &Mat4) -> Result<Mat4> {
    let a = [
        [m[0][0], m[0][1], m[0][2]],
        [m[1][0], m[1][1], m[1][2]],
        [m[2][0], m[2][1], m[2][2]],
    ];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::Singular(format!("calibration determinant {det}")));
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) * inv_det;
        }
    }
    let t = [m[0][3], m[1][3], m[2][3]];
    let mut o = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = inv[i][j];
        }
        o[i][3] = -(0..3).map(|k| inv[i][k] * t[k]).sum::<f64>();
    }
    o[3][3] = 1.0;
    Ok(o)
}

fn extend_3x4(m: &[[f64; 4]; 3]) -> Mat4 {
    [m[0], m[1], m[2], [0.0, 0.0, 0.0, 1.0]]
}

fn extend_3x3(m: &Mat3) -> Mat4 {
    [
        [m[0][0], m[0][1], m[0][2], 0.0],
        [m[1][0], m[1][1], m[1][2], 0.0],
        [m[2][0], m[2][1], m[2][2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

impl Calibration {
    /// Calibration whose rectified camera frame is the LiDAR frame under the
    /// standard axis permutation, with a 720 px focal length pinhole at
    /// `(620, 188)`. Used for synthetic data and calibration-free evaluation.
    pub fn canonical() -> Self {
        Self {
            p2: [[720.0, 0.0, 620.0, 0.0], [0.0, 720.0, 188.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            r0_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            tr_velo_to_cam: [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
        }
    }

    /// Parses `KEY: v1 v2 ...` lines. `P2`, `R0_rect` and `Tr_velo_to_cam`
    /// are required; other keys are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for line in text.lines() {
            let Some((key, rest)) = line.split_once(':') else {
                continue;
            };
            let vals = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("calibration key {key}: bad number '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            map.insert(key.trim(), vals);
        }
        let get = |k: &str, n: usize| -> Result<&Vec<f64>> {
            let v = map
                .get(k)
                .ok_or_else(|| Error::Format(format!("calibration missing {k}")))?;
            if v.len() != n {
                return Err(Error::Format(format!("calibration {k} has {} values, expected {n}", v.len())));
            }
            Ok(v)
        };
        let r3x4 = |v: &Vec<f64>| -> [[f64; 4]; 3] { std::array::from_fn(|i| std::array::from_fn(|j| v[i * 4 + j])) };
        let r3x3 = |v: &Vec<f64>| -> Mat3 { std::array::from_fn(|i| std::array::from_fn(|j| v[i * 3 + j])) };
        let calib = Self {
            p2: r3x4(get("P2", 12)?),
            r0_rect: r3x3(get("R0_rect", 9)?),
            tr_velo_to_cam: r3x4(get("Tr_velo_to_cam", 12)?),
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn to_text(&self) -> String {
        let join = |v: Vec<f64>| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(" ");
        format!(
            "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
            join(self.p2.iter().flatten().copied().collect()),
            join(self.r0_rect.iter().flatten().copied().collect()),
            join(self.tr_velo_to_cam.iter().flatten().copied().collect()),
        )
    }

    /// Rotation blocks must be orthonormal within 1e-3.
    pub fn validate(&self) -> Result<()> {
        let tr: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| self.tr_velo_to_cam[i][j]));
        for (name, m) in [("R0_rect", &self.r0_rect), ("Tr_velo_to_cam", &tr)] {
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (dot - want).abs() > 1e-3 {
                        return Err(Error::Format(format!("{name} rotation is not orthonormal")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `R0_rect * Tr_velo_to_cam` as a homogeneous 4x4.
    pub fn velo_to_rect(&self) -> Mat4 {
        mat4_mul(&extend_3x3(&self.r0_rect), &extend_3x4(&self.tr_velo_to_cam))
    }

    pub fn rect_to_velo(&self) -> Result<Mat4> {
        affine_inverse(&self.velo_to_rect())
    }

    pub fn lidar_to_rect(&self, p: [f64; 3]) -> [f64; 3] {
        mat4_apply(&self.velo_to_rect(), p)
    }

    /// Projects a rectified-camera point; `None` for non-positive depth.
    pub fn rect_to_image(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let m = &self.p2;
        let h: [f64; 3] = std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3]);
        if !(p[2] > 0.0 && h[2] > 0.0) {
            return None;
        }
        Some([h[0] / h[2], h[1] / h[2]])
    }
}

pub fn read_calibration_file(path: &Path) -> Result<Calibration> {
    Calibration::parse(&std::fs::read_to_string(path)?)
}

/// Converts a camera-frame label into a gravity-centered LiDAR box.
pub fn label_to_lidar_box(label: &KittiLabel, calib: &Calibration) -> Result<Box7<f64>> {
    let inv = calib.rect_to_velo()?;
    let [h, w, l] = label.dimensions;
    let [x, y, z] = label.location;
    // camera y points down, so the gravity center sits h/2 above the bottom
    let c = mat4_apply(&inv, [x, y - h / 2.0, z]);
    let mut b = Box7::new(c[0], c[1], c[2], l, w, h, -label.rotation_y - std::f64::consts::FRAC_PI_2)?;
    b.class = label.class();
    b.score = label.score;
    Ok(b)
}

/// Inverse of [`label_to_lidar_box`] for the 3D fields. The 2D fields come
/// from projecting the corners through `P2` (clipped to the image when
/// `image_dims` is given); alpha is derived from the viewing angle.
pub fn lidar_box_to_label(
    b: &Box7<f64>,
    kind: &str,
    calib: &Calibration,
    image_dims: Option<[f64; 2]>,
) -> KittiLabel {
    let c = calib.lidar_to_rect([b.cx, b.cy, b.cz]);
    let location = [c[0], c[1] + b.h / 2.0, c[2]];
    let rotation_y = wrap_angle(-b.yaw - std::f64::consts::FRAC_PI_2);
    let alpha = wrap_angle(rotation_y - location[0].atan2(location[2]));
    let bbox = project_box(b, calib, image_dims).map(|p| p.clipped).unwrap_or([0.0; 4]);
    KittiLabel {
        kind: kind.to_string(),
        truncation: 0.0,
        occlusion: 0,
        alpha,
        bbox,
        dimensions: [b.h, b.w, b.l],
        location,
        rotation_y,
        score: b.score,
    }
}

/// Image-plane extent of a projected box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedBox {
    pub full: [f64; 4],
    pub clipped: [f64; 4],
    /// Fraction of the full 2D box area outside the image.
    pub truncation: f64,
}

/// Projects the eight corners; `None` if any corner has non-positive depth.
pub fn project_box(b: &Box7<f64>, calib: &Calibration, image_dims: Option<[f64; 2]>) -> Option<ProjectedBox> {
    let m = calib.velo_to_rect();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in box_corners(b) {
        let uv = calib.rect_to_image(mat4_apply(&m, c.to_array()))?;
        for a in 0..2 {
            lo[a] = lo[a].min(uv[a]);
            hi[a] = hi[a].max(uv[a]);
        }
    }
    let full = [lo[0], lo[1], hi[0], hi[1]];
    let clipped = match image_dims {
        Some([w, h]) => [lo[0].clamp(0.0, w), lo[1].clamp(0.0, h), hi[0].clamp(0.0, w), hi[1].clamp(0.0, h)],
        None => full,
    };
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let fa = area(full);
    let truncation = if fa > 0.0 { (1.0 - area(clipped) / fa).clamp(0.0, 1.0) } else { 1.0 };
    Some(ProjectedBox {
        full,
        clipped,
        truncation,
    })
}

/// Keeps points that project inside `[0, W) x [0, H)` with positive depth.
pub fn frustum_filter(cloud: &[Point<f64>], calib: &Calibration, image_dims: [f64; 2]) -> Vec<Point<f64>> {
    let m = calib.velo_to_rect();
    cloud
        .iter()
        .filter(|p| {
            calib
                .rect_to_image(mat4_apply(&m, [p.x, p.y, p.z]))
                .is_some_and(|[u, v]| u >= 0.0 && u < image_dims[0] && v >= 0.0 && v < image_dims[1])
        })
        .copied()
        .collect()
}

/// Frame ids from a split file, one per line.
pub fn read_split(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Sorted frame ids of the files with the given extension in a directory.
pub fn list_frames(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Converts a LiDAR-frame vector through the calibration (no translation).
pub fn rect_direction(calib: &Calibration, v: Vec3<f64>) -> [f64; 3] {
    let m = calib.velo_to_rect();
    std::array::from_fn(|i| m[i][0] * v.x + m[i][1] * v.y + m[i][2] * v.z)
}
