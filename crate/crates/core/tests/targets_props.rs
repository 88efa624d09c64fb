mod oracles;

use pvdet::targets::{
    anchor_grid, assign_point_targets, decode_point, decode_voxel, encode_point, encode_voxel, soft_iou_label,
    AnchorConfig, BoxResidual, YawEncoding,
};
use pvdet::geometry::point_in_box;
use pvdet::scalar::wrap_angle;
use pvdet::{Box7, Point, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn arb_box() -> impl Strategy<Value = Box7<f64>> {
    (-50.0..50.0f64, -50.0..50.0f64, -3.0..3.0f64, 0.2..6.0f64, 0.2..6.0f64, 0.2..6.0f64, -PI..PI)
        .prop_map(|(x, y, z, l, w, h, t)| Box7::new(x, y, z, l, w, h, t).unwrap())
}

fn arb_vec(r: f64) -> impl Strategy<Value = Vec3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn assert_same_box(a: &Box7<f64>, b: &Box7<f64>) -> Result<(), TestCaseError> {
    let pa = [a.cx, a.cy, a.cz, a.l, a.w, a.h];
    let pb = [b.cx, b.cy, b.cz, b.l, b.w, b.h];
    for i in 0..6 {
        prop_assert!(oracles::rel_err(pa[i], pb[i], 1.0) <= 1e-9, "{:?} vs {:?}", a, b);
    }
    prop_assert!(wrap_angle(a.yaw - b.yaw).abs() <= 1e-9);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn voxel_round_trip(r in arb_box(), g in arb_box()) {
        let res = encode_voxel(&r, &g).unwrap();
        assert_same_box(&decode_voxel(&res, &r).unwrap(), &g)?;
    }

    #[test]
    fn point_round_trip(p in arb_vec(50.0), prior in (0.2..6.0f64, 0.2..6.0f64, 0.2..6.0f64), g in arb_box()) {
        let prior = Vec3::new(prior.0, prior.1, prior.2);
        let res = encode_point(p, prior, &g).unwrap();
        assert_same_box(&decode_point(&res, p, prior).unwrap(), &g)?;
    }
}

proptest! {
    #[test]
    fn translation_equivariant(r in arb_box(), g in arb_box(), t in arb_vec(20.0)) {
        let a = encode_voxel(&r, &g).unwrap().to_array();
        let mut r2 = r;
        r2.set_center(r.center() + t);
        let mut g2 = g;
        g2.set_center(g.center() + t);
        let b = encode_voxel(&r2, &g2).unwrap().to_array();
        for i in 0..7 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn sincos_round_trip(v in proptest::array::uniform7(-3.0..3.0f64)) {
        let r = BoxResidual::from_array(v);
        let back = BoxResidual::from_vec(&r.to_vec(YawEncoding::SinCos), YawEncoding::SinCos).unwrap();
        for i in 0..6 {
            prop_assert_eq!(back.to_array()[i], v[i]);
        }
        prop_assert!(wrap_angle(back.dtheta - v[6]).abs() <= 1e-12);
    }

    #[test]
    fn anchor_count(w in 1u32..40, h in 1u32..40) {
        let cfg = AnchorConfig::default();
        let n = anchor_grid::<f64>([w, h], &cfg).unwrap().len();
        prop_assert_eq!(n, (w * h) as usize * cfg.classes.len() * cfg.yaws.len());
    }

    #[test]
    fn soft_label_shape(a in -1.0..2.0f64, b in -1.0..2.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(soft_iou_label(lo) <= soft_iou_label(hi));
        if a <= 0.25 { prop_assert_eq!(soft_iou_label(a), 0.0); }
        if a >= 0.75 { prop_assert_eq!(soft_iou_label(a), 1.0); }
    }

    #[test]
    fn foreground_iff_inside(
        pts in proptest::collection::vec((-6.0..6.0f64, -6.0..6.0f64, -2.0..2.0f64), 1..60),
        boxes in proptest::collection::vec((-4.0..4.0f64, -4.0..4.0f64, 0.5..4.0f64, 0.5..3.0f64, -PI..PI), 0..4),
    ) {
        let cloud: Vec<Point<f64>> = pts.iter().map(|&(x, y, z)| Point::new(x, y, z, 0.0)).collect();
        let gts: Vec<Box7<f64>> = boxes.iter().map(|&(x, y, l, w, t)| Box7::new(x, y, 0.0, l, w, 2.0, t).unwrap()).collect();
        let targets = assign_point_targets(&cloud, &gts, &AnchorConfig::default()).unwrap();
        for (p, t) in cloud.iter().zip(&targets) {
            let inside = gts.iter().any(|g| point_in_box(p.pos(), g));
            prop_assert_eq!(t.gt_index.is_some(), inside);
            prop_assert_eq!(t.residual.is_some(), inside);
            if !inside { prop_assert_eq!(t.attention, 0.0); }
        }
    }
}

#[test]
fn paper_anchor_count() {
    let cfg = AnchorConfig::default();
    assert_eq!(anchor_grid::<f32>([176, 200], &cfg).unwrap().len(), 211_200);
}

#[test]
fn log_extent_example() {
    let r = Box7::new(0.0, 0.0, 0.0, 3.9, 1.6, 1.56, 0.0).unwrap();
    let mut res = BoxResidual::zero();
    res.dl = 2f64.ln();
    let d = decode_voxel(&res, &r).unwrap();
    assert!((d.l - 7.8).abs() < 1e-12);
}
