//! Range crop, sparse voxelization with a per-voxel point cap, and the
//! strided / bird's-eye index mappings used by the encoder.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scalar::Scalar;

/// Integer voxel coordinate `(ix, iy, iz)`.
pub type VoxelIndex = [u32; 3];

/// Which points a full voxel keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CapPolicy {
    /// The first `T` points in input order.
    #[default]
    FirstInOrder,
    /// Seeded reservoir sample of `T` points per voxel.
    Reservoir { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct VoxelConfig<T> {
    pub range_min: [T; 3],
    pub range_max: [T; 3],
    pub voxel_size: [T; 3],
    pub max_points_per_voxel: usize,
    #[serde(default)]
    pub cap_policy: CapPolicy,
}

impl<T: Scalar> Default for VoxelConfig<T> {
    fn default() -> Self {
        Self {
            range_min: [T::zero(), T::lit(-40.0), T::lit(-3.0)],
            range_max: [T::lit(70.4), T::lit(40.0), T::one()],
            voxel_size: [T::lit(0.05), T::lit(0.05), T::lit(0.1)],
            max_points_per_voxel: 5,
            cap_policy: CapPolicy::FirstInOrder,
        }
    }
}

impl<T: Scalar> VoxelConfig<T> {
    /// Checks all invariants and returns the grid dimensions.
    pub fn validate(&self) -> Result<[u32; 3]> {
        if self.max_points_per_voxel == 0 {
            return Err(Error::Config("max_points_per_voxel must be positive".into()));
        }
        grid_dims(self)
    }

    /// Whether a position lies in `[range_min, range_max)` on every axis.
    pub fn contains(&self, p: [T; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.range_min[a] && p[a] < self.range_max[a])
    }
}

/// Grid extent per axis; the range must be an integer number of voxels.
pub fn grid_dims<T: Scalar>(config: &VoxelConfig<T>) -> Result<[u32; 3]> {
    let mut dims = [0u32; 3];
    for a in 0..3 {
        let span = config.range_max[a] - config.range_min[a];
        let size = config.voxel_size[a];
        if !(span.is_finite() && size.is_finite()) || span <= T::zero() || size <= T::zero() {
            return Err(Error::Config(format!(
                "axis {a}: range and voxel size must be positive and finite"
            )));
        }
        let q = (span / size).as_f64();
        let n = q.round();
        // relative slack covers decimal sizes such as 0.05 that are not exact in binary
        if n < 1.0 || (q - n).abs() > 1e-6 * n.max(1.0) || n > u32::MAX as f64 {
            return Err(Error::Config(format!(
                "axis {a}: range {span} is not an integer multiple of voxel size {size}"
            )));
        }
        dims[a] = n as u32;
    }
    Ok(dims)
}

/// Precomputed indexer so hot loops do not revalidate the config.
#[derive(Clone, Copy, Debug)]
pub struct Indexer<T> {
    min: [T; 3],
    max: [T; 3],
    inv_size: [T; 3],
    dims: [u32; 3],
}

impl<T: Scalar> Indexer<T> {
    pub fn new(config: &VoxelConfig<T>) -> Result<Self> {
        let dims = grid_dims(config)?;
        Ok(Self {
            min: config.range_min,
            max: config.range_max,
            inv_size: config.voxel_size.map(|s| T::one() / s),
            dims,
        })
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    #[inline]
    pub fn index(&self, p: [T; 3]) -> Option<VoxelIndex> {
        let mut idx = [0u32; 3];
        for a in 0..3 {
            if !(p[a] >= self.min[a] && p[a] < self.max[a]) {
                return None;
            }
            let q = (p[a] - self.min[a]) * self.inv_size[a];
            // snap quotients within cancellation error of a cell boundary
            let tol = T::epsilon() * T::lit(16.0) * p[a].abs().max(self.min[a].abs()).max(T::one()) * self.inv_size[a];
            let r = q.round();
            let f = if (q - r).abs() <= tol { r } else { q.floor() };
            // rounding just below the upper bound can land on `dims`
            idx[a] = f.to_u32().unwrap_or(0).min(self.dims[a] - 1);
        }
        Some(idx)
    }
}

/// `floor((p - range_min) / voxel_size)` per axis, or `None` outside the
/// half-open range.
pub fn voxel_index<T: Scalar>(p: [T; 3], config: &VoxelConfig<T>) -> Result<Option<VoxelIndex>> {
    Ok(Indexer::new(config)?.index(p))
}

/// Componentwise floor division of an index by a stride.
pub fn downsample_index(idx: VoxelIndex, factor: u32) -> Result<VoxelIndex> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    Ok(idx.map(|v| v / factor))
}

/// Drops the vertical component.
pub fn bev_index(idx: VoxelIndex) -> [u32; 2] {
    [idx[0], idx[1]]
}

/// Ceil-divided dimensions of a grid downsampled by `factor`.
pub fn downsampled_dims(dims: [u32; 3], factor: u32) -> Result<[u32; 3]> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    Ok(dims.map(|d| d.div_ceil(factor)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelCell<T> {
    /// Retained points, at most `max_points_per_voxel`.
    pub points: Vec<Point<T>>,
    /// Number of input points that fell into this voxel before the cap.
    pub total_count: usize,
    /// Mean `(x, y, z, r)` over the retained points.
    pub mean: [T; 4],
}

impl<T: Scalar> VoxelCell<T> {
    fn mean_of(points: &[Point<T>]) -> [T; 4] {
        let n = T::from_usize_lossy(points.len().max(1));
        let mut acc = [T::zero(); 4];
        for p in points {
            acc[0] += p.x;
            acc[1] += p.y;
            acc[2] += p.z;
            acc[3] += p.r;
        }
        acc.map(|v| v / n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseVoxelGrid<T> {
    pub config: VoxelConfig<T>,
    dims: [u32; 3],
    cells: BTreeMap<VoxelIndex, VoxelCell<T>>,
}

impl<T: Scalar> SparseVoxelGrid<T> {
    pub fn empty(config: VoxelConfig<T>) -> Result<Self> {
        let dims = config.validate()?;
        Ok(Self {
            config,
            dims,
            cells: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, idx: &VoxelIndex) -> Option<&VoxelCell<T>> {
        self.cells.get(idx)
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        self.cells.contains_key(idx)
    }

    /// Cells in ascending index order.
    pub fn cells(&self) -> impl Iterator<Item = (&VoxelIndex, &VoxelCell<T>)> {
        self.cells.iter()
    }

    /// Mean features `[x, y, z, r]` of the occupied voxels, index-ordered.
    pub fn mean_features(&self) -> Vec<[T; 4]> {
        self.cells.values().map(|c| c.mean).collect()
    }

    pub fn total_points(&self) -> usize {
        self.cells.values().map(|c| c.total_count).sum()
    }

    /// Spatial bounds `(min, max)` of a voxel.
    pub fn cell_bounds(&self, idx: &VoxelIndex) -> ([T; 3], [T; 3]) {
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for a in 0..3 {
            let i = T::from_u32(idx[a]).unwrap();
            lo[a] = self.config.range_min[a] + i * self.config.voxel_size[a];
            hi[a] = lo[a] + self.config.voxel_size[a];
        }
        (lo, hi)
    }

    /// Distinct bird's-eye cells occupied by the grid.
    pub fn bev_cells(&self) -> Vec<[u32; 2]> {
        let mut out: Vec<[u32; 2]> = self.cells.keys().map(|k| bev_index(*k)).collect();
        out.sort_unstable();
        out.dedup();
        out.dedup();
        out
    }

    /// Little-endian binary layout:
    ///
    /// ```text
    /// header:  dims: 3 x u32, cell_count: u64
    /// records (ascending index): ix, iy, iz: u32, total_count: u32,
    ///          retained: u32, then retained x (x, y, z, r) as f64
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.cells.len() * 60);
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(self.cells.len() as u64).to_le_bytes());
        for (idx, cell) in &self.cells {
            for v in idx {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(cell.total_count as u32).to_le_bytes());
            out.extend_from_slice(&(cell.points.len() as u32).to_le_bytes());
            for p in &cell.points {
                for v in [p.x, p.y, p.z, p.r] {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
        out
    }
}

/// Buckets in-range points into voxels, keeping at most
/// `max_points_per_voxel` per cell according to the cap policy.
pub fn voxelize<T: Scalar>(cloud: &[Point<T>], config: &VoxelConfig<T>) -> Result<SparseVoxelGrid<T>> {
    let mut grid = SparseVoxelGrid::empty(*config)?;
    let indexer = Indexer::new(config)?;
    let cap = config.max_points_per_voxel;
    let mut rng = match config.cap_policy {
        CapPolicy::Reservoir { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CapPolicy::FirstInOrder => None,
    };
    for p in cloud {
        let Some(idx) = indexer.index([p.x, p.y, p.z]) else {
            continue;
        };
        let cell = grid.cells.entry(idx).or_insert_with(|| VoxelCell {
            points: Vec::with_capacity(cap.min(8)),
            total_count: 0,
            mean: [T::zero(); 4],
        });
        cell.total_count += 1;
        if cell.points.len() < cap {
            cell.points.push(*p);
        } else if let Some(rng) = rng.as_mut() {
            let j = rng.random_range(0..cell.total_count);
            if j < cap {
                cell.points[j] = *p;
            }
        }
    }
    for cell in grid.cells.values_mut() {
        cell.mean = VoxelCell::mean_of(&cell.points);
    }
    Ok(grid)
}

/// Chunked parallel voxelization. The result is identical to [`voxelize`]
/// for [`CapPolicy::FirstInOrder`]; the reservoir policy runs sequentially.
pub fn voxelize_parallel<T: Scalar>(
    cloud: &[Point<T>],
    config: &VoxelConfig<T>,
    chunk: usize,
) -> Result<SparseVoxelGrid<T>> {
    if config.cap_policy != CapPolicy::FirstInOrder || chunk == 0 || cloud.len() <= chunk {
        return voxelize(cloud, config);
    }
    let indexer = Indexer::new(config)?;
    let cap = config.max_points_per_voxel;
    let partials: Vec<BTreeMap<VoxelIndex, (Vec<Point<T>>, usize)>> = cloud
        .par_chunks(chunk)
        .map(|part| {
            let mut m: BTreeMap<VoxelIndex, (Vec<Point<T>>, usize)> = BTreeMap::new();
            for p in part {
                if let Some(idx) = indexer.index([p.x, p.y, p.z]) {
                    let e = m.entry(idx).or_default();
                    e.1 += 1;
                    if e.0.len() < cap {
                        e.0.push(*p);
                    }
                }
            }
            m
        })
        .collect();
    let mut grid = SparseVoxelGrid::empty(*config)?;
    // chunks merge in input order, so "first T" is preserved
    for part in partials {
        for (idx, (pts, count)) in part {
            let cell = grid.cells.entry(idx).or_insert_with(|| VoxelCell {
                points: Vec::new(),
                total_count: 0,
                mean: [T::zero(); 4],
            });
            cell.total_count += count;
            let room = cap - cell.points.len();
            cell.points.extend(pts.into_iter().take(room));
        }
    }
    for cell in grid.cells.values_mut() {
        cell.mean = VoxelCell::mean_of(&cell.points);
    }
    Ok(grid)
}

/// Keeps only points inside the configured range, order preserved.
pub fn crop_to_range<T: Scalar>(cloud: &[Point<T>], config: &VoxelConfig<T>) -> Vec<Point<T>> {
    cloud
        .iter()
        .filter(|p| config.contains([p.x, p.y, p.z]))
        .copied()
        .collect()
}
