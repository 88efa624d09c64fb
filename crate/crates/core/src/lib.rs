//! Deterministic, non-learned building blocks of a two-stage point-voxel
//! LiDAR 3D object detector.
//!
//! The math is written once over [`Scalar`] (implemented for `f32` and
//! `f64`); the aliases at the bottom of this file pin the common `f64`
//! instantiations used by the evaluator, the KITTI readers and the CLI.

pub mod attention;
pub mod augment;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod kitti;
pub mod losses;
pub mod postprocess;
pub mod scalar;
pub mod synth;
pub mod targets;
pub mod voxel;

pub use error::{Error, Result};
pub use geometry::{Box7, ObjectClass, Point, Vec3};
pub use scalar::Scalar;

/// Oriented box in double precision.
pub type Box7d = geometry::Box7<f64>;
/// Oriented box in single precision.
pub type Box7f = geometry::Box7<f32>;
/// LiDAR point in double precision.
pub type Pointd = geometry::Point<f64>;
/// LiDAR point as stored in velodyne scans.
pub type Pointf = geometry::Point<f32>;
/// Scene (points + labelled boxes) in double precision.
pub type Scened = augment::Scene<f64>;
/// Voxel grid over `f64` points.
pub type VoxelGridd = voxel::SparseVoxelGrid<f64>;
/// Voxelizer configuration in double precision.
pub type VoxelConfigd = voxel::VoxelConfig<f64>;
/// Detection in double precision.
pub type Detectiond = postprocess::Detection<f64>;
