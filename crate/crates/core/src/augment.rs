//! Label-consistent scene augmentation: global flip / rotation / scaling,
//! ground-truth database sampling and the minimum-inner-points filter.
//!
//! Every randomized entry point takes an explicit seed or RNG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_bev, point_in_box, Box7, ObjectClass, Point};
use crate::scalar::{wrap_angle, Scalar};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene<T> {
    pub points: Vec<Point<T>>,
    pub boxes: Vec<Box7<T>>,
}

impl<T: Scalar> Scene<T> {
    pub fn new(points: Vec<Point<T>>, boxes: Vec<Box7<T>>) -> Self {
        Self { points, boxes }
    }

    /// Number of points inside each box (faces inclusive).
    pub fn inner_counts(&self) -> Vec<usize> {
        self.boxes
            .iter()
            .map(|b| self.points.iter().filter(|p| point_in_box(p.pos(), b)).count())
            .collect()
    }

    /// Little-endian dump used for byte-level reproducibility checks:
    /// point count (u64), points as 4 x f64, box count (u64), boxes as
    /// 7 x f64 + class id (u8, 255 = none).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.points.len() as u64).to_le_bytes());
        for p in &self.points {
            for v in [p.x, p.y, p.z, p.r] {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.boxes.len() as u64).to_le_bytes());
        for b in &self.boxes {
            for v in [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw] {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            out.push(b.class.map(|c| c.id()).unwrap_or(255));
        }
        out
    }
}

/// Mirror across the XZ plane: `y -> -y`, `yaw -> -yaw`.
pub fn flip_x<T: Scalar>(scene: &Scene<T>) -> Scene<T> {
    Scene {
        points: scene
            .points
            .iter()
            .map(|p| Point::new(p.x, -p.y, p.z, p.r))
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| {
                let mut o = *b;
                o.cy = -b.cy;
                o.yaw = wrap_angle(-b.yaw);
                o
            })
            .collect(),
    }
}

/// Rotation of the whole scene about `+Z` through the origin.
pub fn rotate_z<T: Scalar>(scene: &Scene<T>, theta: T) -> Scene<T> {
    Scene {
        points: scene
            .points
            .iter()
            .map(|p| p.with_pos(p.pos().rotate_z(theta)))
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| {
                let mut o = *b;
                o.set_center(b.center().rotate_z(theta));
                o.yaw = wrap_angle(b.yaw + theta);
                o
            })
            .collect(),
    }
}

/// Uniform scaling about the origin.
pub fn scale<T: Scalar>(scene: &Scene<T>, s: T) -> Result<Scene<T>> {
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::Domain(format!("scale factor must be positive, got {s}")));
    }
    Ok(Scene {
        points: scene
            .points
            .iter()
            .map(|p| p.with_pos(p.pos() * s))
            .collect(),
        boxes: scene
            .boxes
            .iter()
            .map(|b| {
                let mut o = *b;
                o.set_center(b.center() * s);
                o.l = b.l * s;
                o.w = b.w * s;
                o.h = b.h * s;
                o
            })
            .collect(),
    })
}

/// Drops boxes with strictly fewer than `min_n` inner points; points stay.
pub fn min_points_filter<T: Scalar>(scene: &Scene<T>, min_n: usize) -> Scene<T> {
    let counts = scene.inner_counts();
    Scene {
        points: scene.points.clone(),
        boxes: scene
            .boxes
            .iter()
            .zip(counts)
            .filter(|(_, n)| *n >= min_n)
            .map(|(b, _)| *b)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalAugmentConfig {
    pub flip_probability: f64,
    /// Rotation drawn uniformly from `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub scale_range: [f64; 2],
}

impl Default for GlobalAugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            max_rotation: std::f64::consts::FRAC_PI_4,
            scale_range: [0.95, 1.05],
        }
    }
}

impl GlobalAugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(0.0..=1.0).contains(&self.flip_probability) || self.max_rotation < 0.0 || !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("invalid global augmentation parameters".into()));
        }
        Ok(())
    }
}

/// Random flip, then rotation, then scaling.
pub fn global_augment<T: Scalar, R: Rng>(scene: &Scene<T>, cfg: &GlobalAugmentConfig, rng: &mut R) -> Result<Scene<T>> {
    cfg.validate()?;
    let mut s = scene.clone();
    if rng.random::<f64>() < cfg.flip_probability {
        s = flip_x(&s);
    }
    let theta = if cfg.max_rotation > 0.0 {
        rng.random_range(-cfg.max_rotation..=cfg.max_rotation)
    } else {
        0.0
    };
    s = rotate_z(&s, T::lit(theta));
    let [lo, hi] = cfg.scale_range;
    let f = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    scale(&s, T::lit(f))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtEntry<T> {
    pub bbox: Box7<T>,
    pub points: Vec<Point<T>>,
}

/// Cropped ground-truth objects keyed by class.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GtDatabase<T> {
    pub entries: BTreeMap<ObjectClass, Vec<GtEntry<T>>>,
}

impl<T: Scalar> GtDatabase<T> {
    /// Adds an entry; every point must lie inside the box.
    pub fn insert(&mut self, entry: GtEntry<T>) -> Result<()> {
        let class = entry
            .bbox
            .class
            .ok_or_else(|| Error::UnknownClass("database entry without class".into()))?;
        if entry.points.iter().any(|p| !point_in_box(p.pos(), &entry.bbox)) {
            return Err(Error::Domain("database entry has points outside its box".into()));
        }
        self.entries.entry(class).or_default().push(entry);
        Ok(())
    }

    /// Crops every classed box of a scene into the database.
    pub fn add_scene(&mut self, scene: &Scene<T>) -> Result<()> {
        for b in scene.boxes.iter().filter(|b| b.class.is_some()) {
            let points = scene
                .points
                .iter()
                .filter(|p| point_in_box(p.pos(), b))
                .copied()
                .collect();
            self.insert(GtEntry { bbox: *b, points })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points blob (velodyne layout, f32 x 4 little-endian) plus CSV index
    /// `class,cx,cy,cz,l,w,h,yaw,num_points,offset` where `offset` counts
    /// points from the start of the blob.
    pub fn to_files(&self) -> (Vec<u8>, String) {
        let mut blob = Vec::new();
        let mut index = String::from("class,cx,cy,cz,l,w,h,yaw,num_points,offset\n");
        let mut offset = 0usize;
        for (class, list) in &self.entries {
            for e in list {
                let b = &e.bbox;
                let _ = writeln!(
                    index,
                    "{},{},{},{},{},{},{},{},{},{}",
                    class.name(),
                    b.cx.as_f64(),
                    b.cy.as_f64(),
                    b.cz.as_f64(),
                    b.l.as_f64(),
                    b.w.as_f64(),
                    b.h.as_f64(),
                    b.yaw.as_f64(),
                    e.points.len(),
                    offset
                );
                for p in &e.points {
                    for v in [p.x, p.y, p.z, p.r] {
                        blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                    }
                }
                offset += e.points.len();
            }
        }
        (blob, index)
    }

    /// Reads the pair written by [`GtDatabase::to_files`]. Points stored as
    /// f32 that round just outside their box are dropped.
    pub fn from_files(blob: &[u8], index: &str) -> Result<Self> {
        let points = crate::kitti::read_velodyne(blob)?.points;
        let mut db = Self::default();
        for (n, line) in index.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(Error::Format(format!("db index line {}: expected 10 fields", n + 1)));
            }
            let class = ObjectClass::from_name(f[0]).ok_or_else(|| Error::UnknownClass(f[0].to_string()))?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("db index line {}: bad number '{s}'", n + 1)))
            };
            let cnt = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("db index line {}: bad count '{s}'", n + 1)))
            };
            let b = Box7::new(
                T::lit(num(f[1])?),
                T::lit(num(f[2])?),
                T::lit(num(f[3])?),
                T::lit(num(f[4])?),
                T::lit(num(f[5])?),
                T::lit(num(f[6])?),
                T::lit(num(f[7])?),
            )?
            .with_class(class);
            let (count, offset) = (cnt(f[8])?, cnt(f[9])?);
            let slice = points
                .get(offset..offset + count)
                .ok_or_else(|| Error::Format(format!("db index line {}: points out of range", n + 1)))?;
            let pts = slice
                .iter()
                .map(|p| p.cast::<T>())
                .filter(|p| point_in_box(p.pos(), &b))
                .collect();
            db.insert(GtEntry { bbox: b, points: pts })?;
        }
        Ok(db)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GtSampleOptions {
    /// Remove original points that fall inside a pasted box.
    pub remove_covered_points: bool,
}

/// Pastes database objects into the scene until each class reaches its
/// target count (existing boxes of that class count toward the target) or
/// the database for that class is exhausted. A candidate is accepted only if
/// its BEV IoU with every existing and already pasted box is zero.
pub fn gt_sample<T: Scalar>(
    scene: &Scene<T>,
    db: &GtDatabase<T>,
    per_class_target: &BTreeMap<ObjectClass, usize>,
    seed: u64,
    opts: GtSampleOptions,
) -> Scene<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = scene.boxes.clone();
    let mut pasted: Vec<&GtEntry<T>> = Vec::new();
    for (class, &target) in per_class_target {
        let existing = boxes.iter().filter(|b| b.class == Some(*class)).count();
        let mut need = target.saturating_sub(existing);
        let Some(pool) = db.entries.get(class) else {
            continue;
        };
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            if need == 0 {
                break;
            }
            let cand = &pool[i];
            if boxes.iter().any(|b| iou_bev(b, &cand.bbox) > T::zero()) {
                continue;
            }
            boxes.push(cand.bbox);
            pasted.push(cand);
            need -= 1;
        }
    }
    let mut points: Vec<Point<T>> = if opts.remove_covered_points {
        scene
            .points
            .iter()
            .filter(|p| !pasted.iter().any(|e| point_in_box(p.pos(), &e.bbox)))
            .copied()
            .collect()
    } else {
        scene.points.clone()
    };
    for e in &pasted {
        points.extend_from_slice(&e.points);
    }
    Scene { points, boxes }
}
