//! The h-lattice over B(0,2): voxel grids, sparse voxel sets, dense bit
//! accumulators, and tube rasterization.
//!
//! Cells are exactly `[0,h)^n + h*v` for integer `v`. A `VoxelSet` stores
//! sorted linear cell indices; measure is `h^n * popcount`, so unions of
//! disjoint sets add exactly and all downstream measures are grid-exact.

use crate::error::{Error, Result};
use crate::geom::{self, Point, Tube};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Default cap on the total number of cells in a grid.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 31;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoxelGrid {
    dim: usize,
    h: f64,
    min_idx: i64,
    per_axis: u64,
}

impl PartialEq for VoxelGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.h.to_bits() == other.h.to_bits()
            && self.min_idx == other.min_idx
            && self.per_axis == other.per_axis
    }
}
impl Eq for VoxelGrid {}

impl VoxelGrid {
    pub fn new(dim: usize, h: f64) -> Result<Arc<VoxelGrid>> {
        VoxelGrid::with_budget(dim, h, DEFAULT_CELL_BUDGET)
    }

    pub fn with_budget(dim: usize, h: f64, budget: u64) -> Result<Arc<VoxelGrid>> {
        if !(2..=4).contains(&dim) {
            return Err(Error::Domain(format!("dimension {dim} not in 2..=4")));
        }
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Domain(format!("cell size {h} not in (0, 1]")));
        }
        let r = geom::DOMAIN_RADIUS;
        let min_idx = (-r / h).floor() as i64;
        let max_idx = (r / h).ceil() as i64; // exclusive
        let per_axis = (max_idx - min_idx) as u64;
        let mut count: u64 = 1;
        for _ in 0..dim {
            count = count
                .checked_mul(per_axis)
                .ok_or_else(|| Error::Resource("grid cell count overflows u64".into()))?;
        }
        if count > budget {
            return Err(Error::Resource(format!(
                "grid has {count} cells, budget is {budget}"
            )));
        }
        Ok(Arc::new(VoxelGrid {
            dim,
            h,
            min_idx,
            per_axis,
        }))
    }

    /// Default experiment grid: h = delta/2, degraded to delta when the cell
    /// budget would be exceeded.
    pub fn for_scale(dim: usize, delta: f64) -> Result<Arc<VoxelGrid>> {
        match VoxelGrid::new(dim, delta / 2.0) {
            Ok(g) => Ok(g),
            Err(Error::Resource(_)) => VoxelGrid::new(dim, delta),
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn per_axis(&self) -> u64 {
        self.per_axis
    }

    pub fn min_idx(&self) -> i64 {
        self.min_idx
    }

    pub fn cell_count(&self) -> u64 {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Linear index from per-axis lattice coordinates (axis 0 most
    /// significant). Returns None outside the grid.
    pub fn index_of_coords(&self, v: &[i64; 4]) -> Option<u64> {
        let mut idx: u64 = 0;
        for k in 0..self.dim {
            let off = v[k] - self.min_idx;
            if off < 0 || off as u64 >= self.per_axis {
                return None;
            }
            idx = idx * self.per_axis + off as u64;
        }
        Some(idx)
    }

    pub fn coords_of_index(&self, mut idx: u64) -> [i64; 4] {
        let mut v = [0i64; 4];
        for k in (0..self.dim).rev() {
            v[k] = (idx % self.per_axis) as i64 + self.min_idx;
            idx /= self.per_axis;
        }
        v
    }

    pub fn locate(&self, p: &Point) -> Option<u64> {
        let mut v = [0i64; 4];
        for k in 0..self.dim {
            v[k] = (p[k] / self.h).floor() as i64;
        }
        self.index_of_coords(&v)
    }

    pub fn cell_center(&self, idx: u64) -> Point {
        let v = self.coords_of_index(idx);
        let mut p = [0.0; 4];
        for k in 0..self.dim {
            p[k] = (v[k] as f64 + 0.5) * self.h;
        }
        p
    }

    /// Axis-0 coordinate (most significant digit) of a linear index; used to
    /// stripe work deterministically.
    pub fn axis0_of_index(&self, idx: u64) -> u64 {
        idx / self.per_axis.pow(self.dim as u32 - 1)
    }

    pub fn same_grid(&self, other: &VoxelGrid) -> bool {
        self == other
    }

    pub fn require_same(&self, other: &VoxelGrid) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "dim {} h {} vs dim {} h {}",
                self.dim, self.h, other.dim, other.h
            )))
        }
    }
}

/// A subset of grid cells, stored as sorted unique linear indices.
#[derive(Debug, Clone)]
pub struct VoxelSet {
    grid: Arc<VoxelGrid>,
    cells: Vec<u64>,
}

impl VoxelSet {
    pub fn empty(grid: Arc<VoxelGrid>) -> VoxelSet {
        VoxelSet {
            grid,
            cells: Vec::new(),
        }
    }

    pub fn from_cells(grid: Arc<VoxelGrid>, mut cells: Vec<u64>) -> VoxelSet {
        cells.sort_unstable();
        cells.dedup();
        VoxelSet { grid, cells }
    }

    /// Caller guarantees sorted unique indices.
    pub fn from_sorted(grid: Arc<VoxelGrid>, cells: Vec<u64>) -> VoxelSet {
        debug_assert!(cells.windows(2).all(|w| w[0] < w[1]));
        VoxelSet { grid, cells }
    }

    pub fn grid(&self) -> &Arc<VoxelGrid> {
        &self.grid
    }

    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.cells.len() as f64 * self.grid.cell_volume()
    }

    pub fn contains(&self, cell: u64) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn union(&self, other: &VoxelSet) -> Result<VoxelSet> {
        self.grid.require_same(&other.grid)?;
        let mut out = Vec::with_capacity(self.cells.len() + other.cells.len());
        let (mut i, mut j) = (0, 0);
        while i < self.cells.len() && j < other.cells.len() {
            match self.cells[i].cmp(&other.cells[j]) {
                std::cmp::Ordering::Less => {
                    out.push(self.cells[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.cells[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(self.cells[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.cells[i..]);
        out.extend_from_slice(&other.cells[j..]);
        Ok(VoxelSet {
            grid: self.grid.clone(),
            cells: out,
        })
    }

    pub fn intersect(&self, other: &VoxelSet) -> Result<VoxelSet> {
        self.grid.require_same(&other.grid)?;
        let (small, big) = if self.cells.len() <= other.cells.len() {
            (&self.cells, &other.cells)
        } else {
            (&other.cells, &self.cells)
        };
        let mut out = Vec::new();
        for &c in small {
            if big.binary_search(&c).is_ok() {
                out.push(c);
            }
        }
        Ok(VoxelSet {
            grid: self.grid.clone(),
            cells: out,
        })
    }

    pub fn minus(&self, other: &VoxelSet) -> Result<VoxelSet> {
        self.grid.require_same(&other.grid)?;
        let mut out = Vec::new();
        for &c in &self.cells {
            if other.cells.binary_search(&c).is_err() {
                out.push(c);
            }
        }
        Ok(VoxelSet {
            grid: self.grid.clone(),
            cells: out,
        })
    }

    pub fn intersects(&self, other: &VoxelSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.cells.len() && j < other.cells.len() {
            match self.cells[i].cmp(&other.cells[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn is_subset_of(&self, other: &VoxelSet) -> bool {
        self.cells
            .iter()
            .all(|c| other.cells.binary_search(c).is_ok())
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        self.cells.iter().map(|&c| self.grid.cell_center(c))
    }

    /// Retain only cells whose centers satisfy the predicate.
    pub fn filter_centers<F: Fn(&Point) -> bool>(&self, f: F) -> VoxelSet {
        let cells = self
            .cells
            .iter()
            .copied()
            .filter(|&c| f(&self.grid.cell_center(c)))
            .collect();
        VoxelSet {
            grid: self.grid.clone(),
            cells,
        }
    }
}

/// Fixed-size dense bitmap used as a union accumulator. OR is commutative,
/// so parallel accumulation is bit-exact regardless of scheduling.
pub struct DenseBits {
    words: Vec<AtomicU64>,
    bits: u64,
}

impl DenseBits {
    pub fn new(bits: u64) -> DenseBits {
        let n = bits.div_ceil(64) as usize;
        let mut words = Vec::with_capacity(n);
        words.resize_with(n, || AtomicU64::new(0));
        DenseBits { words, bits }
    }

    pub fn for_grid(grid: &VoxelGrid) -> DenseBits {
        DenseBits::new(grid.cell_count())
    }

    #[inline]
    pub fn set(&self, idx: u64) {
        self.words[(idx >> 6) as usize].fetch_or(1u64 << (idx & 63), Ordering::Relaxed);
    }

    pub fn set_all(&self, cells: &[u64]) {
        for &c in cells {
            self.set(c);
        }
    }

    pub fn get(&self, idx: u64) -> bool {
        self.words[(idx >> 6) as usize].load(Ordering::Relaxed) & (1u64 << (idx & 63)) != 0
    }

    pub fn count_ones(&self) -> u64 {
        self.words
            .iter()
            .map(|w| w.load(Ordering::Relaxed).count_ones() as u64)
            .sum()
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn to_voxelset(&self, grid: Arc<VoxelGrid>) -> VoxelSet {
        let mut cells = Vec::with_capacity(self.count_ones() as usize);
        for (wi, w) in self.words.iter().enumerate() {
            let mut v = w.load(Ordering::Relaxed);
            while v != 0 {
                let b = v.trailing_zeros() as u64;
                cells.push((wi as u64) * 64 + b);
                v &= v - 1;
            }
        }
        VoxelSet::from_sorted(grid, cells)
    }
}

/// Cells whose centers lie within `tube.radius` of the tube's segment.
///
/// Center sampling: the returned measure converges to the tube volume as
/// h -> 0; cells are found by walking unit slabs along the dominant axis of
/// the direction, so cost is proportional to the output size.
pub fn voxelize_tube(tube: &Tube, grid: &Arc<VoxelGrid>) -> Result<VoxelSet> {
    let cells = tube_cells_in_window(tube, grid, 0, grid.per_axis())?;
    Ok(VoxelSet::from_cells(grid.clone(), cells))
}

/// Rasterize only cells whose axis-0 lattice offset lies in `[w_lo, w_hi)`.
/// Used to stripe large scans; the union over a partition of windows equals
/// the full rasterization.
pub fn tube_cells_in_window(
    tube: &Tube,
    grid: &Arc<VoxelGrid>,
    w_lo: u64,
    w_hi: u64,
) -> Result<Vec<u64>> {
    if grid.dim() != tube.dim {
        return Err(Error::GridMismatch(format!(
            "tube dim {} vs grid dim {}",
            tube.dim,
            grid.dim()
        )));
    }
    if grid.h() > tube.radius + 1e-12 {
        return Err(Error::Domain(format!(
            "grid h {} coarser than tube radius {}",
            grid.h(),
            tube.radius
        )));
    }
    let dim = tube.dim;
    let h = grid.h();
    let r = tube.radius;
    let r2 = r * r;
    let hl = tube.half_length();
    let c = tube.center;
    let d = tube.direction;

    // Dominant axis: |d_k| >= 1/sqrt(dim) > 0.
    let mut k = 0;
    for i in 1..dim {
        if d[i].abs() > d[k].abs() {
            k = i;
        }
    }
    let dk = d[k];

    let lo_k = (c[k] - hl * dk.abs() - r) / h;
    let hi_k = (c[k] + hl * dk.abs() + r) / h;
    let slab_lo = lo_k.floor() as i64;
    let slab_hi = hi_k.ceil() as i64; // exclusive

    let min_idx = grid.min_idx();
    let per = grid.per_axis() as i64;
    let mut out = Vec::new();

    for vk in slab_lo.max(min_idx)..slab_hi.min(min_idx + per) {
        if k == 0 {
            let off = vk - min_idx;
            if (off as u64) < w_lo || (off as u64) >= w_hi {
                continue;
            }
        }
        // Segment parameter range whose k-coordinate is within r + h of the
        // slab: conservative window, the exact distance test prunes the rest.
        let x_lo = vk as f64 * h - r - h;
        let x_hi = (vk + 1) as f64 * h + r + h;
        let (mut t0, mut t1) = ((x_lo - c[k]) / dk, (x_hi - c[k]) / dk);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        let t0 = t0.max(-hl);
        let t1 = t1.min(hl);
        if t0 > t1 {
            continue;
        }
        // Bounding ranges for the other axes over the sub-segment, inflated
        // by the radius; cell centers sit at (v + 1/2) h.
        let mut ranges = [(0i64, -1i64); 4];
        for ax in 0..dim {
            if ax == k {
                ranges[ax] = (vk, vk);
                continue;
            }
            let a = c[ax] + t0 * d[ax];
            let b = c[ax] + t1 * d[ax];
            let lo = a.min(b) - r;
            let hi = a.max(b) + r;
            let v_lo = ((lo / h - 0.5).ceil() as i64).max(min_idx);
            let v_hi = ((hi / h - 0.5).floor() as i64).min(min_idx + per - 1);
            ranges[ax] = (v_lo, v_hi);
        }
        if ranges[0].0 == 0 && ranges[0].1 == -1 {
            continue;
        }
        if k != 0 {
            let lo = ranges[0].0.max(min_idx + w_lo as i64);
            let hi = ranges[0].1.min(min_idx + w_hi as i64 - 1);
            ranges[0] = (lo, hi);
        }
        let mut v = [0i64; 4];
        let (r0, r1, r2r, r3) = (ranges[0], ranges[1], ranges[2], ranges[3]);
        let (d2lo, d2hi) = if dim > 2 { r2r } else { (0, 0) };
        let (d3lo, d3hi) = if dim > 3 { r3 } else { (0, 0) };
        for v0 in r0.0..=r0.1 {
            v[0] = v0;
            for v1 in r1.0..=r1.1 {
                v[1] = v1;
                for v2 in d2lo..=d2hi {
                    v[2] = v2;
                    for v3 in d3lo..=d3hi {
                        v[3] = v3;
                        let mut p = [0.0; 4];
                        for ax in 0..dim {
                            p[ax] = (v[ax] as f64 + 0.5) * h;
                        }
                        if geom::dist2_point_segment(&p, &c, &d, hl) <= r2 {
                            if let Some(idx) = grid.index_of_coords(&v) {
                                out.push(idx);
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Monte Carlo tube volume from axis-aligned bounding-box sampling. This is
/// the independent oracle used by tests to validate rasterized measures.
pub fn tube_volume_montecarlo(tube: &Tube, samples: u64, seed: u64) -> f64 {
    let mut rng = crate::rng::Rng::new(seed);
    let (a, b) = tube.endpoints();
    let mut lo = [0.0; 4];
    let mut hi = [0.0; 4];
    for k in 0..tube.dim {
        lo[k] = a[k].min(b[k]) - tube.radius;
        hi[k] = a[k].max(b[k]) + tube.radius;
    }
    let mut vol_box = 1.0;
    for k in 0..tube.dim {
        vol_box *= hi[k] - lo[k];
    }
    let mut hits = 0u64;
    for _ in 0..samples {
        let mut p = [0.0; 4];
        for k in 0..tube.dim {
            p[k] = rng.range(lo[k], hi[k]);
        }
        if tube.contains(&p) {
            hits += 1;
        }
    }
    vol_box * hits as f64 / samples as f64
}
