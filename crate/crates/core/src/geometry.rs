//! Oriented boxes in the LiDAR frame, local-frame transforms and rotated IoU.
//!
//! Boxes are parameterized by their gravity center, extents `(l, w, h)` along
//! heading / lateral / vertical, and a yaw about `+Z` (counterclockwise seen
//! from above). Corner ordering used throughout the crate:
//!
//! ```text
//!   index   local (x, y, z) sign
//!   0       (+, +, -)   bottom face, counterclockwise from +Z
//!   1       (-, +, -)
//!   2       (-, -, -)
//!   3       (+, -, -)
//!   4..8    same XY pattern on the top face (z = +h/2)
//! ```

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Scalar};

/// Sign pattern of the eight corners in the box's local frame.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
];

/// Tolerance used when deciding which side of a clip edge a vertex is on.
pub const CLIP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Rotates about `+Z` by `angle` radians.
    pub fn rotate_z(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// LiDAR return: position plus reflectance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub r: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T, z: T, r: T) -> Self {
        Self { x, y, z, r }
    }

    pub fn pos(&self) -> Vec3<T> {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn with_pos(self, p: Vec3<T>) -> Self {
        Self::new(p.x, p.y, p.z, self.r)
    }

    pub fn cast<U: Scalar>(self) -> Point<U> {
        Point::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
            U::lit(self.r.as_f64()),
        )
    }
}

pub type PointCloud<T> = Vec<Point<T>>;

/// Evaluated object categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [Self::Car, Self::Pedestrian, Self::Cyclist];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// KITTI type string.
    pub fn name(self) -> &'static str {
        match self {
            Self::Car => "Car",
            Self::Pedestrian => "Pedestrian",
            Self::Cyclist => "Cyclist",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "Car" => Some(Self::Car),
            "Pedestrian" => Some(Self::Pedestrian),
            "Cyclist" => Some(Self::Cyclist),
            _ => None,
        }
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Oriented 3D box: gravity center, extents and yaw about `+Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box7<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub l: T,
    pub w: T,
    pub h: T,
    pub yaw: T,
    pub class: Option<ObjectClass>,
    pub score: Option<T>,
}

impl<T: Scalar> Box7<T> {
    /// Builds a box, rejecting non-positive or non-finite extents and
    /// wrapping the yaw into `(-pi, pi]`.
    pub fn new(cx: T, cy: T, cz: T, l: T, w: T, h: T, yaw: T) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            cz,
            l,
            w,
            h,
            yaw: wrap_angle(yaw),
            class: None,
            score: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(center: Vec3<T>, dims: Vec3<T>, yaw: T) -> Result<Self> {
        Self::new(center.x, center.y, center.z, dims.x, dims.y, dims.z, yaw)
    }

    pub fn with_class(mut self, class: ObjectClass) -> Self {
        self.class = Some(class);
        self
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = Some(score);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox("non-finite parameter".into()));
        }
        if self.l <= T::zero() || self.w <= T::zero() || self.h <= T::zero() {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got l={} w={} h={}",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3<T> {
        Vec3::new(self.cx, self.cy, self.cz)
    }

    pub fn dims(&self) -> Vec3<T> {
        Vec3::new(self.l, self.w, self.h)
    }

    pub fn set_center(&mut self, c: Vec3<T>) {
        self.cx = c.x;
        self.cy = c.y;
        self.cz = c.z;
    }

    pub fn volume(&self) -> T {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> T {
        self.cz - self.h * T::half()
    }

    pub fn z_max(&self) -> T {
        self.cz + self.h * T::half()
    }

    /// Same geometry with the heading reversed.
    pub fn flipped_heading(&self) -> Self {
        let mut b = *self;
        b.yaw = wrap_angle(self.yaw + T::PI());
        b
    }

    pub fn cast<U: Scalar>(&self) -> Box7<U> {
        Box7 {
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            cz: U::lit(self.cz.as_f64()),
            l: U::lit(self.l.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
            yaw: U::lit(self.yaw.as_f64()),
            class: self.class,
            score: self.score.map(|s| U::lit(s.as_f64())),
        }
    }

    fn same_geometry(&self, o: &Self) -> bool {
        self.cx == o.cx
            && self.cy == o.cy
            && self.cz == o.cz
            && self.l == o.l
            && self.w == o.w
            && self.h == o.h
            && self.yaw == o.yaw
    }

    /// Radius of the circle enclosing the BEV footprint.
    fn bev_radius(&self) -> T {
        (self.l * self.l + self.w * self.w).sqrt() * T::half()
    }
}

/// The eight corners, ordered as documented at the top of this module.
pub fn box_corners<T: Scalar>(b: &Box7<T>) -> [Vec3<T>; 8] {
    let half = b.dims() * T::half();
    let (s, c) = b.yaw.sin_cos();
    CORNER_SIGNS.map(|sg| {
        let lx = half.x * T::lit(sg[0]);
        let ly = half.y * T::lit(sg[1]);
        let lz = half.z * T::lit(sg[2]);
        Vec3::new(b.cx + c * lx - s * ly, b.cy + s * lx + c * ly, b.cz + lz)
    })
}

/// Expresses a world point in the box frame (origin at center, x along heading).
pub fn to_local<T: Scalar>(p: Vec3<T>, b: &Box7<T>) -> Vec3<T> {
    (p - b.center()).rotate_z(-b.yaw)
}

/// Inverse of [`to_local`].
pub fn from_local<T: Scalar>(p: Vec3<T>, b: &Box7<T>) -> Vec3<T> {
    p.rotate_z(b.yaw) + b.center()
}

/// Boundary-inclusive containment test.
pub fn point_in_box<T: Scalar>(p: Vec3<T>, b: &Box7<T>) -> bool {
    point_in_box_with_margin(p, b, T::zero())
}

/// Containment test with every half extent grown by `margin`.
pub fn point_in_box_with_margin<T: Scalar>(p: Vec3<T>, b: &Box7<T>, margin: T) -> bool {
    // cheap vertical reject before the rotation
    let dz = (p.z - b.cz).abs();
    if dz > b.h * T::half() + margin {
        return false;
    }
    let loc = to_local(p, b);
    loc.x.abs() <= b.l * T::half() + margin && loc.y.abs() <= b.w * T::half() + margin
}

/// BEV footprint as a counterclockwise quadrilateral.
pub fn bev_polygon<T: Scalar>(b: &Box7<T>) -> [[T; 2]; 4] {
    let c = box_corners(b);
    [
        [c[0].x, c[0].y],
        [c[1].x, c[1].y],
        [c[2].x, c[2].y],
        [c[3].x, c[3].y],
    ]
}

/// Shoelace area; positive for counterclockwise polygons.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    acc * T::half()
}

/// Sutherland–Hodgman clip of `subject` by the convex counterclockwise polygon `clip`.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let eps = T::lit(CLIP_EPS);
    let mut output: Vec<[T; 2]> = subject.to_vec();
    let mut input = Vec::with_capacity(8);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let len = (ex * ex + ey * ey).sqrt();
        if len <= T::zero() {
            std::mem::swap(&mut input, &mut output);
            continue;
        }
        // signed distance to the clip edge, positive on the inside (left)
        let side = |p: [T; 2]| (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let dc = side(cur);
            let dp = side(prev);
            let cur_in = dc >= -eps;
            let prev_in = dp >= -eps;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect<T: Scalar>(p: [T; 2], q: [T; 2], dp: T, dq: T) -> [T; 2] {
    let t = dp / (dp - dq);
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Area of the intersection of the two BEV footprints.
pub fn bev_intersection_area<T: Scalar>(a: &Box7<T>, b: &Box7<T>) -> T {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy > reach * reach {
        return T::zero();
    }
    let pa = bev_polygon(a);
    let pb = bev_polygon(b);
    let inter = polygon_area(&clip_convex(&pa, &pb)).max(T::zero());
    inter.min(a.l * a.w).min(b.l * b.w)
}

/// IoU of the yaw-rotated BEV rectangles.
pub fn iou_bev<T: Scalar>(a: &Box7<T>, b: &Box7<T>) -> T {
    if a.l == b.l && a.w == b.w && a.cx == b.cx && a.cy == b.cy && a.yaw == b.yaw {
        return T::one();
    }
    let inter = bev_intersection_area(a, b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.l * a.w + b.l * b.w - inter;
    (inter / union).min(T::one()).max(T::zero())
}

/// Intersection volume of two boxes.
pub fn intersection_volume<T: Scalar>(a: &Box7<T>, b: &Box7<T>) -> T {
    let overlap_h = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if overlap_h <= T::zero() {
        return T::zero();
    }
    bev_intersection_area(a, b) * overlap_h
}

/// Volumetric IoU: BEV intersection times vertical overlap over volume union.
pub fn iou_3d<T: Scalar>(a: &Box7<T>, b: &Box7<T>) -> T {
    if a.same_geometry(b) {
        return T::one();
    }
    let inter = intersection_volume(a, b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).min(T::one()).max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn bx(cx: f64, cy: f64, cz: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box7<f64> {
        Box7::new(cx, cy, cz, l, w, h, yaw).unwrap()
    }

    fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
        v.iter_mut().for_each(|x| *x = (*x * 1e9).round() / 1e9);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(Box7::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box7::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box7::new(0.0, 0.0, 0.0, 1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn yaw_is_wrapped() {
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 3.0 * PI);
        assert!((b.yaw - PI).abs() < 1e-12);
    }

    #[test]
    fn corners_axis_aligned() {
        let c = box_corners(&bx(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.0));
        assert_eq!(sorted_unique(c.iter().map(|p| p.x).collect()), vec![-1.0, 1.0]);
        assert_eq!(sorted_unique(c.iter().map(|p| p.y).collect()), vec![-0.5, 0.5]);
        assert_eq!(sorted_unique(c.iter().map(|p| p.z).collect()), vec![-0.5, 0.5]);
        // documented ordering
        assert_eq!(c[0], Vec3::new(1.0, 0.5, -0.5));
        assert_eq!(c[6], Vec3::new(-1.0, -0.5, 0.5));
    }

    #[test]
    fn corners_quarter_turn() {
        let c = box_corners(&bx(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, FRAC_PI_2));
        assert_eq!(sorted_unique(c.iter().map(|p| p.x).collect()), vec![-0.5, 0.5]);
        assert_eq!(sorted_unique(c.iter().map(|p| p.y).collect()), vec![-1.0, 1.0]);
    }

    #[test]
    fn corners_match_rotation_matrix() {
        let b = bx(3.0, -2.0, 0.7, 4.1, 1.7, 1.5, 0.83);
        let (s, c) = b.yaw.sin_cos();
        for (corner, sg) in box_corners(&b).iter().zip(CORNER_SIGNS) {
            let lx = sg[0] * b.l / 2.0;
            let ly = sg[1] * b.w / 2.0;
            let lz = sg[2] * b.h / 2.0;
            let expect = [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly, b.cz + lz];
            for (got, want) in corner.to_array().iter().zip(expect) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_frame_examples() {
        let b = bx(1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 0.0);
        assert_eq!(to_local(b.center(), &b), Vec3::zero());
        let p = to_local(Vec3::new(2.0, 4.0, 6.0), &b);
        assert_eq!(p, Vec3::new(1.0, 2.0, 3.0));
        let r = bx(1.0, 2.0, 3.0, 4.0, 2.0, 1.0, FRAC_PI_2);
        let q = to_local(Vec3::new(1.0, 3.0, 3.0), &r);
        assert!((q.x - 1.0).abs() < 1e-12 && q.y.abs() < 1e-12 && q.z.abs() < 1e-12);
    }

    #[test]
    fn containment_is_boundary_inclusive() {
        let b = bx(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.0);
        assert!(point_in_box(Vec3::zero(), &b));
        assert!(point_in_box(Vec3::new(1.0, 0.0, 0.0), &b));
        assert!(!point_in_box(Vec3::new(2.0, 0.0, 0.0), &b));
        assert!(point_in_box(Vec3::new(1.0, 0.5, 0.5), &b));
    }

    #[test]
    fn iou_trivial_cases() {
        let a = bx(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.3);
        assert_eq!(iou_3d(&a, &a), 1.0);
        assert_eq!(iou_bev(&a, &a), 1.0);
        let far = bx(10.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.3);
        assert_eq!(iou_3d(&a, &far), 0.0);
        assert_eq!(iou_bev(&a, &far), 0.0);
        let above = bx(0.0, 0.0, 5.0, 2.0, 1.0, 1.0, 0.3);
        assert_eq!(iou_3d(&a, &above), 0.0);
        assert!(iou_bev(&a, &above) > 0.999);
    }

    #[test]
    fn iou_half_overlap_cubes() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((intersection_volume(&a, &b) - 0.5).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rotated_square() {
        // Overlap of a unit square and its 45 degree rotation is the regular
        // octagon of inradius 1/2: area 2 (sqrt 2 - 1).
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let want = inter / (2.0 - inter);
        assert!((iou_bev(&a, &b) - want).abs() < 1e-12);
        assert!((want - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn iou_f32_instantiation() {
        let a = Box7::<f32>::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let b = Box7::<f32>::new(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!(iou_bev(&a, &b) < 1e-8);
    }
}
