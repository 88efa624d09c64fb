//! Center-boundary-aware confidence attention.
//!
//! For a point in a box's local frame, each axis contributes
//! `ca = |(|coord / extent| * 2 - 0.5) * 2|`, normalized as
//! `na = min(1, max(0, 2 ca - 0.5))`. The scalar score is the mean of the
//! three normalized components. Evaluated literally, the raw value is 1 at
//! the center, 0 at a quarter extent and back to 1 on the faces.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, to_local, Box7, Point, Vec3};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionTriple<T> {
    pub raw: [T; 3],
    pub normalized: [T; 3],
    pub score: T,
}

/// Clamp normalization `min(1, max(0, 2 ca - 0.5))`.
pub fn normalize_attention<T: Scalar>(ca: T) -> T {
    (T::two() * ca - T::half()).max(T::zero()).min(T::one())
}

/// Per-axis attention of a local-frame point for a box of extents `dims`.
pub fn confidence_attention<T: Scalar>(p_loc: Vec3<T>, dims: Vec3<T>) -> Result<AttentionTriple<T>> {
    let ext = dims.to_array();
    if ext.iter().any(|e| !(*e > T::zero()) || !e.is_finite()) {
        return Err(Error::Domain(format!(
            "attention extents must be positive, got {:?}",
            ext
        )));
    }
    let loc = p_loc.to_array();
    let mut raw = [T::zero(); 3];
    let mut normalized = [T::zero(); 3];
    for a in 0..3 {
        let u = (loc[a] / ext[a]).abs();
        raw[a] = ((u * T::two() - T::half()) * T::two()).abs();
        normalized[a] = normalize_attention(raw[a]);
    }
    let score = (normalized[0] + normalized[1] + normalized[2]) / T::lit(3.0);
    Ok(AttentionTriple {
        raw,
        normalized,
        score,
    })
}

/// Weights a predicted confidence by an attention score.
pub fn adjust_confidence<T: Scalar>(conf: T, score: T) -> Result<T> {
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !unit(conf) || !unit(score) {
        return Err(Error::Domain(format!(
            "confidence and attention must lie in [0,1], got {conf} and {score}"
        )));
    }
    Ok(conf * score)
}

/// Attention score of a world point against one box.
pub fn box_attention<T: Scalar>(p: Vec3<T>, b: &Box7<T>) -> T {
    // dims of a validated box are positive
    confidence_attention(to_local(p, b), b.dims())
        .map(|t| t.score)
        .unwrap_or(T::zero())
}

/// Per-point training target: the attention score in the enclosing box's
/// frame, the maximum over boxes when several contain the point, and 0 for
/// points outside every box.
pub fn attention_targets<T: Scalar>(cloud: &[Point<T>], boxes: &[Box7<T>]) -> Vec<T> {
    cloud
        .par_iter()
        .map(|p| point_attention(p.pos(), boxes))
        .collect()
}

pub(crate) fn point_attention<T: Scalar>(p: Vec3<T>, boxes: &[Box7<T>]) -> T {
    boxes
        .iter()
        .filter(|b| point_in_box(p, b))
        .map(|b| box_attention(p, b))
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Vec3<f64> {
        Vec3::new(4.0, 2.0, 1.5)
    }

    #[test]
    fn forced_points() {
        let d = dims();
        let c = confidence_attention(Vec3::zero(), d).unwrap();
        assert_eq!(c.raw, [1.0; 3]);
        assert_eq!(c.normalized, [1.0; 3]);
        assert_eq!(c.score, 1.0);
        let q = confidence_attention(d * 0.25, d).unwrap();
        assert_eq!(q.raw, [0.0; 3]);
        assert_eq!(q.score, 0.0);
        let f = confidence_attention(d * 0.5, d).unwrap();
        assert_eq!(f.raw, [1.0; 3]);
        assert_eq!(f.score, 1.0);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_attention(0.0), 0.0);
        assert_eq!(normalize_attention(0.5), 0.5);
        assert_eq!(normalize_attention(1.0), 1.0);
        assert_eq!(normalize_attention(0.25), 0.0);
    }

    #[test]
    fn bad_extent_rejected() {
        assert!(confidence_attention(Vec3::zero(), Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(confidence_attention(Vec3::zero(), Vec3::new(1.0, 1.0, -2.0)).is_err());
    }

    #[test]
    fn adjust_examples() {
        assert_eq!(adjust_confidence(0.8, 1.0).unwrap(), 0.8);
        assert_eq!(adjust_confidence(0.8, 0.0).unwrap(), 0.0);
        assert_eq!(adjust_confidence(0.8, 0.5).unwrap(), 0.4);
        assert!(adjust_confidence(1.2, 0.5).is_err());
    }

    #[test]
    fn targets_examples() {
        let b = Box7::new(10.0, 2.0, -1.0, 4.0, 2.0, 1.5, 0.7).unwrap();
        let quarter = crate::geometry::from_local(Vec3::new(1.0, 0.0, 0.0), &b);
        let cloud = vec![
            Point::new(b.cx, b.cy, b.cz, 0.0),
            Point::new(50.0, 0.0, 0.0, 0.0),
            Point::new(quarter.x, quarter.y, quarter.z, 0.0),
        ];
        let t = attention_targets(&cloud, &[b]);
        assert_eq!(t[0], 1.0);
        assert_eq!(t[1], 0.0);
        assert!((t[2] - 2.0_f64 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_boxes_take_max() {
        let a = Box7::new(0.0, 0.0, 0.0, 4.0, 4.0, 4.0, 0.0).unwrap();
        let b = Box7::new(1.0, 0.0, 0.0, 4.0, 4.0, 4.0, 0.0).unwrap();
        // x = 1 is the quarter point of `a` (score 2/3) and the center of `b`
        let t = attention_targets(&[Point::new(1.0, 0.0, 0.0, 0.0)], &[a, b]);
        assert_eq!(t[0], 1.0);
    }
}
