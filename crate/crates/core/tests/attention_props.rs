use pvdet::attention::{adjust_confidence, attention_targets, confidence_attention, normalize_attention};
use pvdet::{Box7, Point, Vec3};
use proptest::prelude::*;

fn arb_dims() -> impl Strategy<Value = Vec3<f64>> {
    (0.1..6.0f64, 0.1..6.0f64, 0.1..6.0f64).prop_map(|(l, w, h)| Vec3::new(l, w, h))
}

fn arb_loc() -> impl Strategy<Value = Vec3<f64>> {
    (-8.0..8.0f64, -8.0..8.0f64, -8.0..8.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn ranges(p in arb_loc(), d in arb_dims()) {
        let t = confidence_attention(p, d).unwrap();
        for a in 0..3 {
            prop_assert!(t.raw[a] >= 0.0);
            prop_assert!((0.0..=1.0).contains(&t.normalized[a]));
            prop_assert_eq!(t.normalized[a], (2.0 * t.raw[a] - 0.5).clamp(0.0, 1.0));
        }
        prop_assert!((0.0..=1.0).contains(&t.score));
        prop_assert_eq!(t.score, (t.normalized[0] + t.normalized[1] + t.normalized[2]) / 3.0);
    }

    #[test]
    fn sign_symmetry(p in arb_loc(), d in arb_dims(), flips in 0u8..8) {
        let s = |bit: u8| if flips & bit != 0 { -1.0 } else { 1.0 };
        let q = Vec3::new(p.x * s(1), p.y * s(2), p.z * s(4));
        prop_assert_eq!(confidence_attention(p, d).unwrap(), confidence_attention(q, d).unwrap());
    }

    #[test]
    fn zero_set(u in 0.0..1.0f64, ext in 0.1..6.0f64) {
        let d = Vec3::new(ext, 1.0, 1.0);
        let t = confidence_attention(Vec3::new(u * ext, 0.0, 0.0), d).unwrap();
        // na = 0 iff ca <= 1/4 iff u in [3/16, 5/16]
        let margin = 1e-9;
        if u > 3.0 / 16.0 + margin && u < 5.0 / 16.0 - margin {
            prop_assert_eq!(t.normalized[0], 0.0);
        }
        if u < 3.0 / 16.0 - margin || u > 5.0 / 16.0 + margin {
            prop_assert!(t.normalized[0] > 0.0);
        }
        prop_assert_eq!(t.normalized[0] == 0.0, t.raw[0] <= 0.25);
    }

    #[test]
    fn scale_invariance(p in arb_loc(), d in arb_dims(), k in 0.01..100.0f64) {
        let a = confidence_attention(p, d).unwrap();
        let b = confidence_attention(p * k, d * k).unwrap();
        for i in 0..3 {
            prop_assert!((a.raw[i] - b.raw[i]).abs() <= 1e-12);
            prop_assert!((a.normalized[i] - b.normalized[i]).abs() <= 1e-12);
        }
        prop_assert!((a.score - b.score).abs() <= 1e-12);
    }

    #[test]
    fn adjust_monotone(c in 0.0..1.0f64, s in 0.0..1.0f64, dc in 0.0..1.0f64, ds in 0.0..1.0f64) {
        let c2 = (c + dc).min(1.0);
        let s2 = (s + ds).min(1.0);
        let base = adjust_confidence(c, s).unwrap();
        prop_assert!(adjust_confidence(c2, s).unwrap() >= base);
        prop_assert!(adjust_confidence(c, s2).unwrap() >= base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn normalize_monotone(a in 0.0..2.0f64, b in 0.0..2.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(normalize_attention(lo) <= normalize_attention(hi));
    }
}

#[test]
fn forced_points() {
    let d = Vec3::new(3.9, 1.6, 1.56);
    let center = confidence_attention(Vec3::zero(), d).unwrap();
    assert_eq!((center.raw, center.normalized, center.score), ([1.0; 3], [1.0; 3], 1.0));
    let quarter = confidence_attention(d * 0.25, d).unwrap();
    assert_eq!((quarter.raw, quarter.normalized, quarter.score), ([0.0; 3], [0.0; 3], 0.0));
    let face = confidence_attention(d * 0.5, d).unwrap();
    assert_eq!((face.raw, face.normalized, face.score), ([1.0; 3], [1.0; 3], 1.0));
    assert!(confidence_attention(Vec3::zero(), Vec3::new(0.0, 1.0, 1.0)).is_err());
}

#[test]
fn targets_zero_outside() {
    let b = Box7::new(10.0, 0.0, 0.0, 4.0, 2.0, 2.0, 0.7).unwrap();
    let cloud = [Point::new(10.0, 0.0, 0.0, 0.0), Point::new(30.0, 0.0, 0.0, 0.0)];
    assert_eq!(attention_targets(&cloud, &[b]), vec![1.0, 0.0]);
    assert!(attention_targets::<f64>(&[], &[b]).is_empty());
}
