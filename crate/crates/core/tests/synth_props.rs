use pvdet::geometry::{iou_bev, point_in_box};
use pvdet::synth::{face_visible, generate, nearest_face, perturb_detections, PerturbConfig, SynthConfig};
use pvdet::Vec3;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn object_points_on_visible_faces(seed in any::<u64>()) {
        let cfg = SynthConfig { seed, background_points: 0, ..SynthConfig::default() };
        let s = generate(&cfg).unwrap();
        let sensor = Vec3::from_array(cfg.sensor_origin);
        for p in &s.scene.points {
            let owner = s.scene.boxes.iter().find(|b| point_in_box(p.pos(), b));
            prop_assert!(owner.is_some());
            let b = owner.unwrap();
            let (d, axis, sign) = nearest_face(p.pos(), b);
            prop_assert!(d <= 1e-9);
            prop_assert!(face_visible(b, axis, sign, sensor));
        }
        for (i, a) in s.scene.boxes.iter().enumerate() {
            for b in &s.scene.boxes[i + 1..] {
                prop_assert_eq!(iou_bev(a, b), 0.0);
            }
            prop_assert!((a.z_min() - cfg.ground_z).abs() < 1e-12);
        }
        prop_assert_eq!(s.scene.boxes.len() + s.placement_failures, s.requested);
    }

    #[test]
    fn background_stays_outside(seed in any::<u64>()) {
        let s = generate(&SynthConfig { seed, points_per_object: [0, 0], ..SynthConfig::default() }).unwrap();
        for p in &s.scene.points {
            prop_assert!(s.scene.boxes.iter().all(|b| !point_in_box(p.pos(), b)));
        }
    }

    #[test]
    fn scores_fall_with_noise(seed in any::<u64>()) {
        let s = generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let cfg = PerturbConfig { ghost_rate: 0.0, drop_rate: 0.0, ..PerturbConfig::with_noise(1.0) };
        let dets = perturb_detections(&s.scene.boxes, &cfg, seed).unwrap();
        prop_assert_eq!(dets.len(), s.scene.boxes.len());
        for (d, b) in dets.iter().zip(&s.scene.boxes) {
            let err = (d.bbox.center() - b.center()).norm();
            prop_assert!(d.score <= 1.0);
            prop_assert!(d.score <= (-err / (b.l * b.l + b.w * b.w).sqrt()).exp() + 1e-12);
        }
    }
}
