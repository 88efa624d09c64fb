//! Seeded synthetic scenes: boxes on a flat ground plane whose points are
//! sampled on the faces visible from the sensor, plus background clutter,
//! and a noisy oracle detector built from ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::Scene;
use crate::error::{Error, Result};
use crate::geometry::{from_local, iou_bev, point_in_box, to_local, Box7, ObjectClass, Point, Vec3};
use crate::postprocess::Detection;
use crate::targets::AnchorConfig;

/// Face points are placed this far inside the face plane so that they stay
/// inside the box after the world-frame round trip.
pub const FACE_INSET: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Inclusive `[min, max]` object count per class.
    pub object_counts: BTreeMap<ObjectClass, [usize; 2]>,
    /// Relative uniform jitter applied to each class's mean size.
    pub size_jitter: f64,
    /// Inclusive `[min, max]` points sampled per object.
    pub points_per_object: [usize; 2],
    pub sensor_origin: [f64; 3],
    pub background_points: usize,
    /// `(x_min, y_min)` of the placement area.
    pub placement_min: [f64; 2],
    /// `(x_max, y_max)` of the placement area.
    pub placement_max: [f64; 2],
    pub ground_z: f64,
    /// Object centers must lie within this horizontal angle of `+x`.
    pub fov_half_angle: Option<f64>,
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            object_counts: BTreeMap::from([
                (ObjectClass::Car, [2, 5]),
                (ObjectClass::Pedestrian, [1, 3]),
                (ObjectClass::Cyclist, [1, 3]),
            ]),
            size_jitter: 0.1,
            points_per_object: [30, 200],
            sensor_origin: [0.0, 0.0, 0.0],
            background_points: 2000,
            placement_min: [0.0, -40.0],
            placement_max: [70.4, 40.0],
            ground_z: -1.7,
            fov_half_angle: Some(40f64.to_radians()),
            max_retries: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.size_jitter) {
            return Err(Error::Config("size_jitter must lie in [0, 0.5)".into()));
        }
        if self.points_per_object[0] > self.points_per_object[1] {
            return Err(Error::Config("points_per_object range is inverted".into()));
        }
        if self.object_counts.values().any(|r| r[0] > r[1]) {
            return Err(Error::Config("object count range is inverted".into()));
        }
        if (0..2).any(|a| self.placement_min[a] >= self.placement_max[a]) {
            return Err(Error::Config("placement range is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene: Scene<f64>,
    pub requested: usize,
    /// Objects dropped because no collision-free placement was found.
    pub placement_failures: usize,
}

/// Faces of a box in local coordinates: `(axis, sign)`.
const FACES: [(usize, f64); 6] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)];

/// Whether the face `(axis, sign)` of `b` faces the sensor.
pub fn face_visible(b: &Box7<f64>, axis: usize, sign: f64, sensor: Vec3<f64>) -> bool {
    let half = b.dims().to_array().map(|v| v * 0.5);
    let mut local_center = [0.0; 3];
    local_center[axis] = sign * half[axis];
    let mut local_normal = [0.0; 3];
    local_normal[axis] = sign;
    let fc = from_local(Vec3::from_array(local_center), b);
    let n = Vec3::from_array(local_normal).rotate_z(b.yaw);
    n.dot(sensor - fc) > 0.0
}

fn sample_visible_surface(b: &Box7<f64>, n: usize, sensor: Vec3<f64>, rng: &mut ChaCha8Rng) -> Vec<Point<f64>> {
    let dims = b.dims().to_array();
    let faces: Vec<(usize, f64, f64)> = FACES
        .iter()
        .filter(|(axis, sign)| face_visible(b, *axis, *sign, sensor))
        .map(|(axis, sign)| {
            let area: f64 = (0..3).filter(|a| a != axis).map(|a| dims[a]).product();
            (*axis, *sign, area)
        })
        .collect();
    let total: f64 = faces.iter().map(|f| f.2).sum();
    if faces.is_empty() || total <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if pick < f.2 {
                    face = *f;
                    break;
                }
                pick -= f.2;
            }
            let (axis, sign, _) = face;
            let mut local = [0.0; 3];
            for a in 0..3 {
                let half = dims[a] * 0.5 - FACE_INSET;
                local[a] = if a == axis {
                    sign * half
                } else {
                    rng.random_range(-half..=half)
                };
            }
            let w = from_local(Vec3::from_array(local), b);
            Point::new(w.x, w.y, w.z, rng.random::<f64>())
        })
        .collect()
}

/// Generates one scene; a pure function of the config (seed included).
pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let priors = AnchorConfig::default();
    let sensor = Vec3::from_array(config.sensor_origin);
    let mut boxes: Vec<Box7<f64>> = Vec::new();
    let mut requested = 0;
    let mut failures = 0;
    for (&class, &[lo, hi]) in &config.object_counts {
        let count = rng.random_range(lo..=hi);
        requested += count;
        let mean = priors.prior(class).expect("default priors cover every class");
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..config.max_retries.max(1) {
                let j = config.size_jitter;
                let size: [f64; 3] = std::array::from_fn(|a| {
                    let f = if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
                    mean[a] * f
                });
                let x = rng.random_range(config.placement_min[0]..config.placement_max[0]);
                let y = rng.random_range(config.placement_min[1]..config.placement_max[1]);
                let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                if let Some(fov) = config.fov_half_angle {
                    if (y - sensor.y).atan2(x - sensor.x).abs() > fov {
                        continue;
                    }
                }
                let b = Box7::new(x, y, config.ground_z + size[2] / 2.0, size[0], size[1], size[2], yaw)?
                    .with_class(class);
                if point_in_box(sensor, &b) || boxes.iter().any(|o| iou_bev(o, &b) > 0.0) {
                    continue;
                }
                boxes.push(b);
                placed = true;
                break;
            }
            if !placed {
                failures += 1;
            }
        }
    }
    let mut points = Vec::new();
    for b in &boxes {
        let [lo, hi] = config.points_per_object;
        let n = rng.random_range(lo..=hi);
        points.extend(sample_visible_surface(b, n, sensor, &mut rng));
    }
    let mut bg = 0;
    while bg < config.background_points {
        let p = Point::new(
            rng.random_range(config.placement_min[0]..config.placement_max[0]),
            rng.random_range(config.placement_min[1]..config.placement_max[1]),
            config.ground_z + rng.random_range(-0.1..3.0),
            rng.random::<f64>(),
        );
        bg += 1;
        if boxes.iter().any(|b| point_in_box(p.pos(), b)) {
            continue;
        }
        points.push(p);
    }
    Ok(SynthScene {
        scene: Scene::new(points, boxes),
        requested,
        placement_failures: failures,
    })
}

/// Distance from a point to the nearest face plane of a box, and that face.
pub fn nearest_face(p: Vec3<f64>, b: &Box7<f64>) -> (f64, usize, f64) {
    let loc = to_local(p, b).to_array();
    let half = b.dims().to_array().map(|v| v * 0.5);
    (0..3)
        .map(|a| {
            let sign = if loc[a] >= 0.0 { 1.0 } else { -1.0 };
            ((half[a] - loc[a].abs()).abs(), a, sign)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Std-dev of the center offset per axis, meters.
    pub center_sigma: f64,
    /// Std-dev of the log size factor per extent.
    pub size_sigma: f64,
    /// Std-dev of the yaw offset, radians.
    pub yaw_sigma: f64,
    pub drop_rate: f64,
    /// Probability, per ground-truth box, of emitting one ghost detection.
    pub ghost_rate: f64,
    /// `(x_min, y_min, x_max, y_max)` for ghost centers.
    pub ghost_area: [f64; 4],
    pub ground_z: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self::with_noise(0.0)
    }
}

impl PerturbConfig {
    /// Preset scaling every noise source by one level; 0 is the exact oracle.
    pub fn with_noise(level: f64) -> Self {
        let rate = level.clamp(0.0, 1.0);
        Self {
            center_sigma: 0.3 * level,
            size_sigma: 0.05 * level,
            yaw_sigma: 0.1 * level,
            drop_rate: 0.1 * rate,
            ghost_rate: 0.3 * rate,
            ghost_area: [0.0, -40.0, 70.4, 40.0],
            ground_z: -1.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = (0.0..=1.0).contains(&self.drop_rate) && (0.0..=1.0).contains(&self.ghost_rate);
        let sigmas_ok = [self.center_sigma, self.size_sigma, self.yaw_sigma]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite());
        if !rates_ok || !sigmas_ok || self.ghost_area[0] >= self.ghost_area[2] || self.ghost_area[1] >= self.ghost_area[3] {
            return Err(Error::Config("invalid perturbation parameters".into()));
        }
        Ok(())
    }
}

/// Noisy detections from ground truth. Scores are `exp(-m)` where `m` sums
/// the diagonal-normalized center error, the absolute log size errors and the
/// absolute yaw error, so the noiseless case yields score 1. Ghosts carry
/// scores in `[0.05, 0.6)`.
pub fn perturb_detections(boxes: &[Box7<f64>], cfg: &PerturbConfig, seed: u64) -> Result<Vec<Detection<f64>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors = AnchorConfig::default();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut out = Vec::new();
    for b in boxes {
        let class = b.class.unwrap_or(ObjectClass::Car);
        let drop = rng.random::<f64>() < cfg.drop_rate;
        let dc = [normal(&mut rng), normal(&mut rng), normal(&mut rng)].map(|v| v * cfg.center_sigma);
        let ds = [normal(&mut rng), normal(&mut rng), normal(&mut rng)].map(|v| v * cfg.size_sigma);
        let dyaw = normal(&mut rng) * cfg.yaw_sigma;
        if !drop {
            let mut d = *b;
            d.cx += dc[0];
            d.cy += dc[1];
            d.cz += dc[2];
            d.l *= ds[0].exp();
            d.w *= ds[1].exp();
            d.h *= ds[2].exp();
            d.yaw = crate::scalar::wrap_angle(d.yaw + dyaw);
            d.score = None;
            let diag = (b.l * b.l + b.w * b.w).sqrt();
            let m = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt() / diag
                + ds.iter().map(|v| v.abs()).sum::<f64>()
                + dyaw.abs();
            out.push(Detection::new(d, class, (-m).exp())?);
        }
        if rng.random::<f64>() < cfg.ghost_rate {
            let gclass = ObjectClass::ALL[rng.random_range(0..3)];
            let size = priors.prior(gclass).expect("default priors cover every class");
            let [x0, y0, x1, y1] = cfg.ghost_area;
            let g = Box7::new(
                rng.random_range(x0..x1),
                rng.random_range(y0..y1),
                cfg.ground_z + size[2] / 2.0,
                size[0],
                size[1],
                size[2],
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            )?
            .with_class(gclass);
            out.push(Detection::new(g, gclass, rng.random_range(0.05..0.6))?);
        }
    }
    Ok(out)
}
