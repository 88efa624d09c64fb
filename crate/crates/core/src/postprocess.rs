//! Prediction-side geometry: score prefiltering, class-wise greedy 3D NMS,
//! top-K RoI selection, RoI grid sampling and voxel window queries.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_local, iou_3d, Box7, ObjectClass, Vec3};
use crate::scalar::Scalar;
use crate::voxel::{Indexer, SparseVoxelGrid, VoxelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub bbox: Box7<T>,
    pub class: ObjectClass,
    pub score: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: Box7<T>, class: ObjectClass, score: T) -> Result<Self> {
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::Domain(format!("detection score {score} outside [0,1]")));
        }
        bbox.validate()?;
        Ok(Self { bbox, class, score })
    }
}

/// Keeps detections whose score is at least their class threshold.
pub fn score_filter<T: Scalar>(
    dets: &[Detection<T>],
    thresholds: &BTreeMap<ObjectClass, f64>,
) -> Result<Vec<Detection<T>>> {
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let thr = thresholds
            .get(&d.class)
            .ok_or_else(|| Error::UnknownClass(format!("no score threshold for {}", d.class)))?;
        if d.score.as_f64() >= *thr {
            out.push(*d);
        }
    }
    Ok(out)
}

/// Indices sorted by descending score, ties by ascending index.
fn score_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-wise NMS. Returns the indices of kept detections in
/// selection order (descending score, ties by input index).
pub fn nms_3d_indices<T: Scalar>(dets: &[Detection<T>], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::Domain(format!("NMS threshold {iou_threshold} outside [0,1]")));
    }
    let thr = T::lit(iou_threshold);
    let mut by_class: BTreeMap<ObjectClass, Vec<usize>> = BTreeMap::new();
    for i in score_order(dets) {
        by_class.entry(dets[i].class).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_class.into_values().collect();
    let kept: Vec<Vec<usize>> = groups
        .par_iter()
        .map(|order| greedy(dets, order, thr))
        .collect();
    let mut all: Vec<usize> = kept.into_iter().flatten().collect();
    let rank: BTreeMap<usize, usize> = score_order(dets).into_iter().enumerate().map(|(r, i)| (i, r)).collect();
    all.sort_by_key(|i| rank[i]);
    Ok(all)
}

fn greedy<T: Scalar>(dets: &[Detection<T>], order: &[usize], thr: T) -> Vec<usize> {
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for a in 0..order.len() {
        if suppressed[a] {
            continue;
        }
        let ka = &dets[order[a]].bbox;
        keep.push(order[a]);
        for b in a + 1..order.len() {
            if !suppressed[b] && iou_3d(ka, &dets[order[b]].bbox) > thr {
                suppressed[b] = true;
            }
        }
    }
    keep
}

/// Greedy class-wise 3D NMS; see [`nms_3d_indices`].
pub fn nms_3d<T: Scalar>(dets: &[Detection<T>], iou_threshold: f64) -> Result<Vec<Detection<T>>> {
    Ok(nms_3d_indices(dets, iou_threshold)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// The `k` highest-scoring detections, ties broken by earlier index.
pub fn top_k<T: Scalar>(dets: &[Detection<T>], k: usize) -> Vec<Detection<T>> {
    score_order(dets).into_iter().take(k).map(|i| dets[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiGridSpec {
    pub subdivisions: [u32; 3],
    pub search_ranges: Vec<[u32; 3]>,
}

impl Default for RoiGridSpec {
    fn default() -> Self {
        Self {
            subdivisions: [6, 6, 6],
            search_ranges: vec![[4, 4, 4], [8, 8, 8]],
        }
    }
}

impl RoiGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subdivisions.contains(&0) {
            return Err(Error::Config("RoI subdivisions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Centers of the uniform subdivision of an RoI, in world coordinates.
/// Ordered x-fastest, then y, then z.
pub fn roi_grid_points<T: Scalar>(roi: &Box7<T>, subdivisions: [u32; 3]) -> Result<Vec<Vec3<T>>> {
    if subdivisions.contains(&0) {
        return Err(Error::Config("RoI subdivisions must be >= 1".into()));
    }
    let [nx, ny, nz] = subdivisions;
    let frac = |i: u32, n: u32| T::lit((i as f64 + 0.5) / n as f64 - 0.5);
    let mut out = Vec::with_capacity((nx * ny * nz) as usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let local = Vec3::new(frac(i, nx) * roi.l, frac(j, ny) * roi.w, frac(k, nz) * roi.h);
                out.push(from_local(local, roi));
            }
        }
    }
    Ok(out)
}

/// Occupied voxels whose index lies within `range` of the center's voxel on
/// every axis. Empty when the center falls outside the grid.
pub fn neighbor_query<T: Scalar>(grid: &SparseVoxelGrid<T>, center: Vec3<T>, range: [u32; 3]) -> Vec<VoxelIndex> {
    let Ok(indexer) = Indexer::new(&grid.config) else {
        return Vec::new();
    };
    let Some(c) = indexer.index(center.to_array()) else {
        return Vec::new();
    };
    let dims = grid.dims();
    let lo: [u32; 3] = std::array::from_fn(|a| c[a].saturating_sub(range[a]));
    let hi: [u32; 3] = std::array::from_fn(|a| (c[a] + range[a]).min(dims[a] - 1));
    let window: u64 = (0..3).map(|a| (hi[a] - lo[a] + 1) as u64).product();
    let mut out = Vec::new();
    if window <= grid.len() as u64 {
        for iz in lo[2]..=hi[2] {
            for iy in lo[1]..=hi[1] {
                for ix in lo[0]..=hi[0] {
                    let idx = [ix, iy, iz];
                    if grid.contains(&idx) {
                        out.push(idx);
                    }
                }
            }
        }
        out.sort_unstable();
    } else {
        out.extend(
            grid.cells()
                .map(|(k, _)| *k)
                .filter(|k| (0..3).all(|a| k[a] >= lo[a] && k[a] <= hi[a])),
        );
    }
    out
}

/// One neighbor list per search range.
pub fn neighbor_query_multi<T: Scalar>(
    grid: &SparseVoxelGrid<T>,
    center: Vec3<T>,
    ranges: &[[u32; 3]],
) -> Vec<Vec<VoxelIndex>> {
    ranges.iter().map(|r| neighbor_query(grid, center, *r)).collect()
}
