mod oracles;

use oracles::{central_diff, rel_err};
use pvdet::geometry::box_corners;
use pvdet::losses::{bce, corner_loss, focal_loss, smooth_l1, FocalParams};
use pvdet::{Box7, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn arb_box() -> impl Strategy<Value = Box7<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64, 0.5..4.0f64, 0.5..3.0f64, 0.5..2.0f64, -3.0..3.0f64)
        .prop_map(|(x, y, z, l, w, h, t)| Box7::new(x, y, z, l, w, h, t).unwrap())
}

fn set_param(b: &Box7<f64>, i: usize, v: f64) -> Box7<f64> {
    let mut p = [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw];
    p[i] = v;
    // raw assignment keeps yaw continuous across the wrap for differencing
    let mut out = *b;
    out.cx = p[0];
    out.cy = p[1];
    out.cz = p[2];
    out.l = p[3];
    out.w = p[4];
    out.h = p[5];
    out.yaw = p[6];
    out
}

/// True when some corner sits near a non-differentiable switch.
fn near_kink(pred: &Box7<f64>, gt: &Box7<f64>) -> bool {
    let pc = box_corners(pred);
    let gc = box_corners(gt);
    let fc = box_corners(&gt.flipped_heading());
    (0..8).any(|i| {
        let a = (pc[i] - gc[i]).norm();
        let b = (pc[i] - fc[i]).norm();
        (a - b).abs() < 1e-3 || (a.min(b) - 1.0).abs() < 1e-3
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn focal_gradient(p in 0.01..0.99f64, pos in any::<bool>(), alpha in 0.05..0.95f64, gamma in 0.0..4.0f64) {
        let params = FocalParams { alpha, gamma };
        let g = focal_loss(p, pos, params).unwrap();
        let fd = central_diff(|x| focal_loss(x, pos, params).unwrap().value, p, H);
        prop_assert!(g.value >= 0.0);
        prop_assert!(rel_err(g.grad, fd, FLOOR) <= TOL, "{} vs {}", g.grad, fd);
    }

    #[test]
    fn smooth_l1_gradient(d in -5.0..5.0f64, beta in 0.1..3.0f64) {
        prop_assume!((d.abs() - beta).abs() > 1e-3);
        let g = smooth_l1(d, beta).unwrap();
        let fd = central_diff(|x| smooth_l1(x, beta).unwrap().value, d, H);
        prop_assert!(g.value >= 0.0);
        prop_assert!(rel_err(g.grad, fd, FLOOR) <= TOL);
    }

    #[test]
    fn bce_gradient(p in 0.01..0.99f64, y in 0.0..=1.0f64) {
        let g = bce(p, y).unwrap();
        let fd = central_diff(|x| bce(x, y).unwrap().value, p, H);
        prop_assert!(g.value >= 0.0);
        prop_assert!(rel_err(g.grad, fd, FLOOR) <= TOL);
    }

    #[test]
    fn focal_reduces_to_half_bce(p in 1e-6..(1.0 - 1e-6), pos in any::<bool>()) {
        let f: f64 = focal_loss(p, pos, FocalParams { alpha: 0.5, gamma: 0.0 }).unwrap().value;
        let b = bce(p, if pos { 1.0 } else { 0.0 }).unwrap().value;
        prop_assert!((f - 0.5 * b).abs() <= 1e-12);
    }

    #[test]
    fn corner_gradient(pred in arb_box(), gt in arb_box()) {
        prop_assume!(!near_kink(&pred, &gt));
        let cl = corner_loss(&pred, &gt);
        let p = [pred.cx, pred.cy, pred.cz, pred.l, pred.w, pred.h, pred.yaw];
        for i in 0..7 {
            let fd = central_diff(|x| corner_loss(&set_param(&pred, i, x), &gt).value, p[i], H);
            prop_assert!(rel_err(cl.grad[i], fd, FLOOR) <= TOL, "param {}: {} vs {}", i, cl.grad[i], fd);
        }
    }

    #[test]
    fn corner_rigid_invariance(pred in arb_box(), gt in arb_box(), t in (-10.0..10.0f64, -10.0..10.0f64, -2.0..2.0f64), theta in -PI..PI) {
        let tv = Vec3::new(t.0, t.1, t.2);
        let mv = |b: &Box7<f64>| Box7::from_center(b.center().rotate_z(theta) + tv, b.dims(), b.yaw + theta).unwrap();
        let a = corner_loss(&pred, &gt).value;
        let b = corner_loss(&mv(&pred), &mv(&gt)).value;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn zero_at_perfect_prediction() {
    let g = Box7::new(1.0, 2.0, -1.0, 3.9, 1.6, 1.56, 0.3).unwrap();
    assert_eq!(corner_loss(&g, &g).value, 0.0);
    assert_eq!(smooth_l1(0.0, 1.0).unwrap().value, 0.0);
    assert_eq!(bce(0.5, 0.5).unwrap().grad, 0.0);
}
