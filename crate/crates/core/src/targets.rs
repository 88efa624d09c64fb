//! Anchors, box residual encoding and per-point target assignment.
//!
//! Residuals use diagonal-normalized center offsets, log-ratio extents and a
//! wrapped yaw difference:
//!
//! ```text
//! d  = sqrt(ref.l^2 + ref.w^2)
//! dx = (gt.cx - ref.cx) / d        dl = ln(gt.l / ref.l)
//! dy = (gt.cy - ref.cy) / d        dw = ln(gt.w / ref.w)
//! dz = (gt.cz - ref.cz) / ref.h    dh = ln(gt.h / ref.h)
//! dtheta = wrap(gt.yaw - ref.yaw)
//! ```
//!
//! The voxel variant uses an anchor as the reference; the point variant uses
//! the point itself as the center, the class size prior as the extents and
//! a zero reference yaw.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::point_attention;
use crate::error::{Error, Result};
use crate::geometry::{iou_bev, point_in_box, Box7, ObjectClass, Point, Vec3};
use crate::scalar::{wrap_angle, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorClass {
    pub class: ObjectClass,
    /// `(l, w, h)` in meters.
    pub size: [f64; 3],
    /// Gravity-center height of the anchor plane.
    pub z_center: f64,
    /// IoU at or above which an anchor is positive.
    pub pos_iou: f64,
    /// IoU below which an anchor is negative.
    pub neg_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub classes: Vec<AnchorClass>,
    pub yaws: Vec<f64>,
    /// BEV stride of the anchor feature map relative to the voxel grid.
    pub stride: u32,
    /// Grid origin `(x_min, y_min)`.
    pub origin: [f64; 2],
    /// Fine voxel size in x and y.
    pub voxel_xy: [f64; 2],
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let cls = |class, size, pos_iou, neg_iou| AnchorClass {
            class,
            size,
            z_center: -1.0,
            pos_iou,
            neg_iou,
        };
        Self {
            classes: vec![
                cls(ObjectClass::Car, [3.9, 1.6, 1.56], 0.6, 0.45),
                cls(ObjectClass::Pedestrian, [0.8, 0.6, 1.73], 0.5, 0.35),
                cls(ObjectClass::Cyclist, [1.76, 0.6, 1.73], 0.5, 0.35),
            ],
            yaws: vec![0.0, std::f64::consts::FRAC_PI_2],
            stride: 8,
            origin: [0.0, -40.0],
            voxel_xy: [0.05, 0.05],
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("anchor stride must be >= 1".into()));
        }
        if self.voxel_xy.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("anchor voxel size must be positive".into()));
        }
        for c in &self.classes {
            if c.size.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config(format!("anchor size for {} must be positive", c.class)));
            }
            if !(0.0..=1.0).contains(&c.neg_iou) || !(0.0..=1.0).contains(&c.pos_iou) || c.neg_iou > c.pos_iou {
                return Err(Error::Config(format!("bad IoU thresholds for {}", c.class)));
            }
        }
        let pi = std::f64::consts::PI;
        if self.yaws.iter().any(|y| !(*y > -pi && *y <= pi)) {
            return Err(Error::Config("anchor yaws must be normalized to (-pi, pi]".into()));
        }
        Ok(())
    }

    /// Size prior for a class, if configured.
    pub fn prior(&self, class: ObjectClass) -> Option<[f64; 3]> {
        self.classes.iter().find(|c| c.class == class).map(|c| c.size)
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.classes.len() * self.yaws.len()
    }
}

/// Anchors tiled over a `(W, H)` BEV feature map, one per cell center, size
/// and yaw. Order: row (y) major, then column, then class, then yaw.
pub fn anchor_grid<T: Scalar>(bev_dims: [u32; 2], config: &AnchorConfig) -> Result<Vec<Box7<T>>> {
    config.validate()?;
    let [w, h] = bev_dims;
    if w == 0 || h == 0 {
        return Err(Error::Config("anchor map dims must be >= 1".into()));
    }
    let step_x = config.voxel_xy[0] * config.stride as f64;
    let step_y = config.voxel_xy[1] * config.stride as f64;
    let mut out = Vec::with_capacity(w as usize * h as usize * config.anchors_per_cell());
    for iy in 0..h {
        let y = config.origin[1] + (iy as f64 + 0.5) * step_y;
        for ix in 0..w {
            let x = config.origin[0] + (ix as f64 + 0.5) * step_x;
            for c in &config.classes {
                for &yaw in &config.yaws {
                    let b = Box7::new(
                        T::lit(x),
                        T::lit(y),
                        T::lit(c.z_center),
                        T::lit(c.size[0]),
                        T::lit(c.size[1]),
                        T::lit(c.size[2]),
                        T::lit(yaw),
                    )?;
                    out.push(b.with_class(c.class));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive(ObjectClass),
    Negative,
    Ignore,
}

/// Classification labels for the auxiliary anchor task using BEV IoU
/// against same-class boxes. Localization is not assigned.
pub fn assign_anchor_labels<T: Scalar>(
    anchors: &[Box7<T>],
    gts: &[Box7<T>],
    config: &AnchorConfig,
) -> Vec<AnchorLabel> {
    anchors
        .par_iter()
        .map(|a| {
            let Some(spec) = a.class.and_then(|c| config.classes.iter().find(|s| s.class == c)) else {
                return AnchorLabel::Ignore;
            };
            let best = gts
                .iter()
                .filter(|g| g.class == a.class)
                .map(|g| iou_bev(a, g).as_f64())
                .fold(0.0, f64::max);
            if best >= spec.pos_iou {
                AnchorLabel::Positive(spec.class)
            } else if best < spec.neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxResidual<T> {
    pub dx: T,
    pub dy: T,
    pub dz: T,
    pub dl: T,
    pub dw: T,
    pub dh: T,
    pub dtheta: T,
}

/// How the yaw residual is laid out when flattened to a regression vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum YawEncoding {
    /// Single wrapped angle difference.
    #[default]
    Wrapped,
    /// `(sin dtheta, cos dtheta)`.
    SinCos,
}

impl<T: Scalar> BoxResidual<T> {
    pub fn zero() -> Self {
        Self::from_array([T::zero(); 7])
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.dx, self.dy, self.dz, self.dl, self.dw, self.dh, self.dtheta]
    }

    pub fn from_array(a: [T; 7]) -> Self {
        Self {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dl: a[3],
            dw: a[4],
            dh: a[5],
            dtheta: a[6],
        }
    }

    /// Flattens to 7 (wrapped) or 8 (sin/cos) values.
    pub fn to_vec(&self, enc: YawEncoding) -> Vec<T> {
        let mut v = self.to_array()[..6].to_vec();
        match enc {
            YawEncoding::Wrapped => v.push(self.dtheta),
            YawEncoding::SinCos => {
                v.push(self.dtheta.sin());
                v.push(self.dtheta.cos());
            }
        }
        v
    }

    pub fn from_vec(v: &[T], enc: YawEncoding) -> Result<Self> {
        let want = match enc {
            YawEncoding::Wrapped => 7,
            YawEncoding::SinCos => 8,
        };
        if v.len() != want {
            return Err(Error::LengthMismatch {
                expected: want,
                got: v.len(),
            });
        }
        let dtheta = match enc {
            YawEncoding::Wrapped => v[6],
            YawEncoding::SinCos => v[6].atan2(v[7]),
        };
        Ok(Self::from_array([v[0], v[1], v[2], v[3], v[4], v[5], dtheta]))
    }
}

fn check_dims<T: Scalar>(d: Vec3<T>) -> Result<()> {
    if d.x > T::zero() && d.y > T::zero() && d.z > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidBox(format!("reference extents must be positive, got {d:?}")))
    }
}

fn encode<T: Scalar>(center: Vec3<T>, dims: Vec3<T>, yaw: T, gt: &Box7<T>) -> Result<BoxResidual<T>> {
    check_dims(dims)?;
    gt.validate()?;
    let diag = (dims.x * dims.x + dims.y * dims.y).sqrt();
    Ok(BoxResidual {
        dx: (gt.cx - center.x) / diag,
        dy: (gt.cy - center.y) / diag,
        dz: (gt.cz - center.z) / dims.z,
        dl: (gt.l / dims.x).ln(),
        dw: (gt.w / dims.y).ln(),
        dh: (gt.h / dims.z).ln(),
        dtheta: wrap_angle(gt.yaw - yaw),
    })
}

fn decode<T: Scalar>(r: &BoxResidual<T>, center: Vec3<T>, dims: Vec3<T>, yaw: T) -> Result<Box7<T>> {
    check_dims(dims)?;
    let diag = (dims.x * dims.x + dims.y * dims.y).sqrt();
    Box7::new(
        center.x + r.dx * diag,
        center.y + r.dy * diag,
        center.z + r.dz * dims.z,
        dims.x * r.dl.exp(),
        dims.y * r.dw.exp(),
        dims.z * r.dh.exp(),
        yaw + r.dtheta,
    )
}

/// Residual of `gt` relative to an anchor / voxel reference box.
pub fn encode_voxel<T: Scalar>(reference: &Box7<T>, gt: &Box7<T>) -> Result<BoxResidual<T>> {
    encode(reference.center(), reference.dims(), reference.yaw, gt)
}

pub fn decode_voxel<T: Scalar>(r: &BoxResidual<T>, reference: &Box7<T>) -> Result<Box7<T>> {
    decode(r, reference.center(), reference.dims(), reference.yaw)
}

/// Residual of `gt` relative to a point and a class size prior.
pub fn encode_point<T: Scalar>(point: Vec3<T>, prior: Vec3<T>, gt: &Box7<T>) -> Result<BoxResidual<T>> {
    encode(point, prior, T::zero(), gt)
}

pub fn decode_point<T: Scalar>(r: &BoxResidual<T>, point: Vec3<T>, prior: Vec3<T>) -> Result<Box7<T>> {
    decode(r, point, prior, T::zero())
}

/// IoU-derived soft confidence label, `min(1, max(0, 2 iou - 0.5))`.
pub fn soft_iou_label<T: Scalar>(iou: T) -> T {
    crate::attention::normalize_attention(iou)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointTarget<T> {
    /// `None` marks background.
    pub class: Option<ObjectClass>,
    /// Index of the assigned ground-truth box.
    pub gt_index: Option<usize>,
    pub residual: Option<BoxResidual<T>>,
    pub attention: T,
}

/// Foreground/background, point residual and attention target for every
/// point. A point inside several boxes goes to the box with the nearest
/// center (lowest index on ties). Boxes without a class or without a
/// configured prior fall back to their own extents as the prior.
pub fn assign_point_targets<T: Scalar>(
    cloud: &[Point<T>],
    gts: &[Box7<T>],
    priors: &AnchorConfig,
) -> Result<Vec<PointTarget<T>>> {
    for g in gts {
        g.validate()?;
    }
    cloud
        .par_iter()
        .map(|p| {
            let pos = p.pos();
            let mut best: Option<(usize, T)> = None;
            for (i, g) in gts.iter().enumerate() {
                if !point_in_box(pos, g) {
                    continue;
                }
                let d = (g.center() - pos).norm();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            let attention = point_attention(pos, gts);
            match best {
                None => Ok(PointTarget {
                    class: None,
                    gt_index: None,
                    residual: None,
                    attention,
                }),
                Some((i, _)) => {
                    let g = &gts[i];
                    let prior = g
                        .class
                        .and_then(|c| priors.prior(c))
                        .map(|s| Vec3::new(T::lit(s[0]), T::lit(s[1]), T::lit(s[2])))
                        .unwrap_or_else(|| g.dims());
                    Ok(PointTarget {
                        class: g.class,
                        gt_index: Some(i),
                        residual: Some(encode_point(pos, prior, g)?),
                        attention,
                    })
                }
            }
        })
        .collect()
}

/// CSV dump: `point,class,dx,dy,dz,dl,dw,dh,dtheta,attention`. Background
/// rows carry class `-1` and empty residual fields.
pub fn targets_to_csv<T: Scalar>(targets: &[PointTarget<T>]) -> String {
    let mut s = String::from("point,class,dx,dy,dz,dl,dw,dh,dtheta,attention\n");
    for (i, t) in targets.iter().enumerate() {
        let class = t.class.map(|c| c.id() as i32).unwrap_or(-1);
        let _ = write!(s, "{i},{class}");
        match t.residual {
            Some(r) => {
                for v in r.to_array() {
                    let _ = write!(s, ",{:.9}", v.as_f64());
                }
            }
            None => s.push_str(",,,,,,,"),
        }
        let _ = writeln!(s, ",{:.9}", t.attention.as_f64());
    }
    s
}
