//! Independent reference implementations shared by integration and
//! acceptance tests. Nothing here calls the library's geometry kernels.
#![allow(dead_code)]

use pvdet::eval::{EvalRecord, GtObject};
use pvdet::postprocess::Detection;
use pvdet::{Box7, ObjectClass};
use rand::Rng;

pub const CALIB_000000: &str = include_str!("../fixtures/calib_000000.txt");

/// Whether `(x, y, z)` lies in the box, by explicit inverse rotation.
pub fn inside(b: &Box7<f64>, x: f64, y: f64, z: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy, dz) = (x - b.cx, y - b.cy, z - b.cz);
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0 && dz.abs() <= b.h / 2.0
}

/// Monte-Carlo 3D IoU: uniform samples in `a`, counting hits in `b`.
pub fn mc_iou_3d<R: Rng>(a: &Box7<f64>, b: &Box7<f64>, samples: usize, rng: &mut R) -> f64 {
    let (s, c) = a.yaw.sin_cos();
    let mut hits = 0usize;
    for _ in 0..samples {
        let lx = (rng.random::<f64>() - 0.5) * a.l;
        let ly = (rng.random::<f64>() - 0.5) * a.w;
        let lz = (rng.random::<f64>() - 0.5) * a.h;
        let x = a.cx + c * lx - s * ly;
        let y = a.cy + s * lx + c * ly;
        if inside(b, x, y, a.cz + lz) {
            hits += 1;
        }
    }
    let va = a.l * a.w * a.h;
    let vb = b.l * b.w * b.h;
    let inter = va * hits as f64 / samples as f64;
    inter / (va + vb - inter)
}

/// Random box with extents in `[0.5, 4]` near the origin, any yaw.
pub fn random_box<R: Rng>(rng: &mut R, spread: f64) -> Box7<f64> {
    Box7::new(
        rng.random_range(-spread..=spread),
        rng.random_range(-spread..=spread),
        rng.random_range(-spread / 4.0..=spread / 4.0),
        rng.random_range(0.5..4.0),
        rng.random_range(0.5..4.0),
        rng.random_range(0.5..4.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

/// Greedy NMS characterized as the unique subset `S` with
/// `i ∈ S ⇔ no j ∈ S ranked above i (same class) has IoU(i, j) > thr`,
/// found by exhaustive search over all subsets. Ranking is descending score
/// with ties by index. Returns the kept indices sorted ascending.
pub fn exhaustive_nms(dets: &[Detection<f64>], thr: f64, iou: impl Fn(&Box7<f64>, &Box7<f64>) -> f64) -> Vec<usize> {
    let n = dets.len();
    assert!(n <= 16);
    let above = |j: usize, i: usize| dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i);
    let mut solutions = Vec::new();
    for mask in 0u32..(1 << n) {
        let ok = (0..n).all(|i| {
            let member = mask & (1 << i) != 0;
            let blocked = (0..n).any(|j| {
                j != i
                    && mask & (1 << j) != 0
                    && dets[j].class == dets[i].class
                    && above(j, i)
                    && iou(&dets[j].bbox, &dets[i].bbox) > thr
            });
            member == !blocked
        });
        if ok {
            solutions.push(mask);
        }
    }
    assert_eq!(solutions.len(), 1, "greedy fixed point must be unique");
    (0..n).filter(|i| solutions[0] & (1 << i) != 0).collect()
}

/// Central finite difference of a scalar function.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn car_at(x: f64, y: f64) -> Box7<f64> {
    Box7::new(x, y, -0.92, 3.9, 1.6, 1.56, 0.0).unwrap().with_class(ObjectClass::Car)
}

/// Ten frames, one easy car per frame. Scores and outcomes by frame:
/// 0: TP .95, 1: TP .90, 2: ghost FP .85, 3: TP .80, 4: TP .75 and duplicate
/// FP .70, 5: TP .65, 6: ghost FP .60 (GT missed), 7: TP .55, 8: TP .50,
/// 9: GT missed. Frame 9 also holds a moderate-only pedestrian detected at .9.
///
/// Car PR sweep, 10 GT: recall .1 .2 .2 .3 .4 .4 .5 .5 .6 .7 with precision
/// 1 1 2/3 3/4 4/5 4/6 5/7 5/8 6/9 7/10. Interpolated precision is 1 up to
/// recall .2, 4/5 up to .4, 5/7 up to .5, 7/10 up to .7, then 0, so
/// AP11 = (3 + 2·0.8 + 5/7 + 2·0.7) / 11 = 47/77 and
/// AP40 = (8 + 8·0.8 + 4·5/7 + 8·0.7) / 40 = 4/7.
pub fn ten_frame_fixture() -> Vec<EvalRecord> {
    let easy = |b: Box7<f64>| GtObject {
        bbox: b,
        class: ObjectClass::Car,
        height_px: 50.0,
        occlusion: 0,
        truncation: 0.0,
    };
    let det = |b: Box7<f64>, s: f64| Detection::new(b, ObjectClass::Car, s).unwrap();
    let ghost = car_at(40.0, 20.0);
    let mut frames = Vec::new();
    for f in 0..10 {
        let gt = car_at(15.0, f as f64 - 5.0);
        let dets = match f {
            0 => vec![det(gt, 0.95)],
            1 => vec![det(gt, 0.90)],
            2 => vec![det(ghost, 0.85)],
            3 => vec![det(gt, 0.80)],
            4 => vec![det(gt, 0.75), det(gt, 0.70)],
            5 => vec![det(gt, 0.65)],
            6 => vec![det(ghost, 0.60)],
            7 => vec![det(gt, 0.55)],
            8 => vec![det(gt, 0.50)],
            _ => vec![],
        };
        frames.push(EvalRecord { gts: vec![easy(gt)], dets });
    }
    let ped = Box7::new(12.0, 3.0, -0.835, 0.8, 0.6, 1.73, 0.0)
        .unwrap()
        .with_class(ObjectClass::Pedestrian);
    frames[9].gts.push(GtObject {
        bbox: ped,
        class: ObjectClass::Pedestrian,
        height_px: 30.0,
        occlusion: 1,
        truncation: 0.2,
    });
    frames[9].dets.push(Detection::new(ped, ObjectClass::Pedestrian, 0.9).unwrap());
    frames
}

pub const TEN_FRAME_CAR_AP11: f64 = 47.0 / 77.0;
pub const TEN_FRAME_CAR_AP40: f64 = 4.0 / 7.0;
