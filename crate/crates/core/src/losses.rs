//! Scalar loss terms with analytic gradients.
//!
//! Probabilities passed to the log-based losses are clamped to
//! `[PROB_EPS, 1 - PROB_EPS]` before evaluation; the gradient is that of the
//! clamped expression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_corners, Box7, CORNER_SIGNS};
use crate::scalar::Scalar;

pub const PROB_EPS: f64 = 1e-7;

/// Loss value together with its derivative w.r.t. the prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueGrad<T> {
    pub value: T,
    pub grad: T,
}

fn check_prob<T: Scalar>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::Domain(format!("probability {p} not in (0,1)")));
    }
    let eps = T::lit(PROB_EPS);
    Ok(p.max(eps).min(T::one() - eps))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Sigmoid focal loss on a probability `p` for a binary label.
pub fn focal_loss<T: Scalar>(p: T, positive: bool, params: FocalParams) -> Result<ValueGrad<T>> {
    let p = check_prob(p)?;
    let alpha = T::lit(params.alpha);
    let gamma = T::lit(params.gamma);
    let (pt, at, dpt) = if positive {
        (p, alpha, T::one())
    } else {
        (T::one() - p, T::one() - alpha, -T::one())
    };
    let q = T::one() - pt;
    let log_pt = pt.ln();
    let value = -at * q.powf(gamma) * log_pt;
    // d/dpt of -(1-pt)^g ln pt = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt
    let mod_term = if params.gamma == 0.0 {
        T::zero()
    } else {
        gamma * q.powf(gamma - T::one()) * log_pt
    };
    let grad = at * (mod_term - q.powf(gamma) / pt) * dpt;
    Ok(ValueGrad { value, grad })
}

/// Huber-style smooth L1 with transition at `beta`.
pub fn smooth_l1<T: Scalar>(d: T, beta: T) -> Result<ValueGrad<T>> {
    if !(beta > T::zero()) {
        return Err(Error::Domain(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    Ok(if d.abs() < beta {
        ValueGrad {
            value: T::half() * d * d / beta,
            grad: d / beta,
        }
    } else {
        ValueGrad {
            value: d.abs() - T::half() * beta,
            grad: d.signum(),
        }
    })
}

/// Binary cross-entropy against a (possibly soft) target `y` in `[0, 1]`.
pub fn bce<T: Scalar>(p: T, y: T) -> Result<ValueGrad<T>> {
    let p = check_prob(p)?;
    if !(y >= T::zero() && y <= T::one()) {
        return Err(Error::Domain(format!("target {y} not in [0,1]")));
    }
    let value = -y * p.ln() - (T::one() - y) * (T::one() - p).ln();
    let grad = -y / p + (T::one() - y) / (T::one() - p);
    Ok(ValueGrad { value, grad })
}

/// Corner regularization value and gradient w.r.t. the predicted box
/// parameters `(cx, cy, cz, l, w, h, yaw)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerLoss<T> {
    pub value: T,
    pub grad: [T; 7],
}

/// Mean over the eight corners of smooth-L1 (beta = 1) applied to the
/// Euclidean corner distance. Each corner uses the smaller of its distances
/// to the ground truth and to the heading-flipped ground truth.
pub fn corner_loss<T: Scalar>(pred: &Box7<T>, gt: &Box7<T>) -> CornerLoss<T> {
    let beta = T::one();
    let pc = box_corners(pred);
    let gc = box_corners(gt);
    let fc = box_corners(&gt.flipped_heading());
    let (s, c) = pred.yaw.sin_cos();
    let mut value = T::zero();
    let mut grad = [T::zero(); 7];
    for i in 0..8 {
        let d_gt = pc[i] - gc[i];
        let d_fl = pc[i] - fc[i];
        let diff = if d_gt.norm() <= d_fl.norm() { d_gt } else { d_fl };
        let dist = diff.norm();
        let sl = smooth_l1(dist, beta).expect("beta positive");
        value += sl.value;
        // gradient of smooth_l1(|diff|) w.r.t. the predicted corner
        let g = if dist < beta {
            diff * (T::one() / beta)
        } else if dist > T::zero() {
            diff * (T::one() / dist)
        } else {
            diff
        };
        let sg = CORNER_SIGNS[i];
        let lx = T::lit(sg[0]) * T::half();
        let ly = T::lit(sg[1]) * T::half();
        let lz = T::lit(sg[2]) * T::half();
        // corner = center + Rz(yaw) (lx l, ly w, lz h)
        grad[0] += g.x;
        grad[1] += g.y;
        grad[2] += g.z;
        grad[3] += g.x * c * lx + g.y * s * lx;
        grad[4] += -g.x * s * ly + g.y * c * ly;
        grad[5] += g.z * lz;
        let ox = lx * pred.l;
        let oy = ly * pred.w;
        grad[6] += g.x * (-s * ox - c * oy) + g.y * (c * ox - s * oy);
    }
    let n = T::lit(8.0);
    CornerLoss {
        value: value / n,
        grad: grad.map(|v| v / n),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub aux: f64,
    pub cls: f64,
    pub loc: f64,
    pub cam: f64,
    pub cref: f64,
    pub lref: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            aux: 1.0,
            cls: 1.0,
            loc: 1.0,
            cam: 1.0,
            cref: 1.0,
            lref: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| *w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be positive and finite".into()))
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.aux, self.cls, self.loc, self.cam, self.cref, self.lref]
    }
}

/// The six loss terms: auxiliary anchor classification, point
/// classification, localization, attention, confidence refinement and
/// localization refinement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub aux: f64,
    pub cls: f64,
    pub loc: f64,
    pub cam: f64,
    pub cref: f64,
    pub lref: f64,
    pub weights: LossWeights,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 6] {
        [self.aux, self.cls, self.loc, self.cam, self.cref, self.lref]
    }
}

/// Weighted sum of the six terms.
pub fn total_loss(terms: &LossTerms) -> Result<f64> {
    let vals = terms.as_array();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("loss terms must be finite".into()));
    }
    Ok(vals
        .iter()
        .zip(terms.weights.as_array())
        .map(|(v, w)| v * w)
        .sum())
}

/// Mean smooth-L1 over residual components of foreground samples only.
pub fn localization_loss<T: Scalar>(residual_errors: &[[T; 7]], beta: T) -> Result<T> {
    if residual_errors.is_empty() {
        return Ok(T::zero());
    }
    let mut acc = T::zero();
    for r in residual_errors {
        for d in r {
            acc += smooth_l1(*d, beta)?.value;
        }
    }
    Ok(acc / T::from_usize_lossy(residual_errors.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn focal_examples() {
        let v = focal_loss(0.5, true, FocalParams::default()).unwrap();
        assert!((v.value - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v.value - 0.0433217).abs() < 1e-7);
        let near = focal_loss(1.0 - 1e-9, true, FocalParams::default()).unwrap();
        assert!(near.value < 1e-12);
        assert!(focal_loss(0.0, true, FocalParams::default()).is_err());
        assert!(focal_loss(1.0, false, FocalParams::default()).is_err());
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0, 1.0).unwrap().value, 0.0);
        assert_eq!(smooth_l1(0.5, 1.0).unwrap().value, 0.125);
        assert_eq!(smooth_l1(2.0, 1.0).unwrap().value, 1.5);
        assert_eq!(smooth_l1(-2.0, 1.0).unwrap().grad, -1.0);
        assert!(smooth_l1(1.0, 0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce(0.5, 0.5).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0 - 1e-9, 1.0).unwrap().value < 1e-6);
        let h = -(0.3f64 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((bce(0.3, 0.3).unwrap().value - h).abs() < 1e-15);
        assert!((h - 0.610864).abs() < 1e-6);
        assert!(bce(0.3, 1.5).is_err());
    }

    #[test]
    fn corner_examples() {
        let gt = Box7::new(5.0, -1.0, -0.8, 3.9, 1.6, 1.56, 0.4).unwrap();
        assert_eq!(corner_loss(&gt, &gt).value, 0.0);
        let flipped = gt.flipped_heading();
        assert!(corner_loss(&flipped, &gt).value < 1e-24);
        let mut moved = gt;
        moved.cx += 1.0;
        assert!((corner_loss(&moved, &gt).value - 0.5_f64).abs() < 1e-12);
        let _ = PI;
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(&LossTerms::default()).unwrap(), 0.0);
        let ones = LossTerms {
            aux: 1.0,
            cls: 1.0,
            loc: 1.0,
            cam: 1.0,
            cref: 1.0,
            lref: 1.0,
            weights: LossWeights::default(),
        };
        assert_eq!(total_loss(&ones).unwrap(), 6.0);
        let w = LossTerms {
            aux: 1.0,
            weights: LossWeights {
                aux: 2.0,
                ..LossWeights::default()
            },
            ..LossTerms::default()
        };
        assert_eq!(total_loss(&w).unwrap(), 2.0);
        let bad = LossTerms {
            cls: f64::NAN,
            ..LossTerms::default()
        };
        assert!(total_loss(&bad).is_err());
    }

    #[test]
    fn localization_averages_foreground() {
        assert_eq!(localization_loss::<f64>(&[], 1.0).unwrap(), 0.0);
        let r = [[0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        assert!((localization_loss(&r, 1.0).unwrap() - (0.125_f64 + 1.5) / 2.0).abs() < 1e-15);
    }
}
