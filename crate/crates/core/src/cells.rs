//! Streaming cell-incidence engine.
//!
//! Rasterizes a family of tubes stripe by stripe along axis 0 and hands each
//! occupied cell to a callback together with the sorted list of incident tube
//! tags. Stripe count is a function of the grid alone and rasterization
//! within a stripe is chunk-parallel with ordered collection, so every
//! consumer sees cells in increasing index order and results are identical
//! for any thread count.

use crate::error::Result;
use crate::geom::Tube;
use crate::grid::{tube_cells_in_window, VoxelGrid};
use rayon::prelude::*;
use std::sync::Arc;

/// Stripes sized so a stripe's incidence list stays comfortably in memory.
fn stripe_count(grid: &VoxelGrid) -> u64 {
    ((grid.cell_count() >> 24) + 1).clamp(1, 64)
}

/// Calls `f(cell, tags)` for every cell covered by at least one tube; `tags`
/// is sorted. Tags are caller-chosen (tube index, or family-packed index).
pub fn scan_incidence<F>(grid: &Arc<VoxelGrid>, tubes: &[(u32, &Tube)], mut f: F) -> Result<()>
where
    F: FnMut(u64, &[u32]) -> Result<()>,
{
    let stripes = stripe_count(grid);
    let per_axis = grid.per_axis();
    for s in 0..stripes {
        let w_lo = per_axis * s / stripes;
        let w_hi = per_axis * (s + 1) / stripes;
        // Chunked, order-preserving parallel rasterization.
        let chunk_results: Vec<Result<Vec<(u64, u32)>>> = tubes
            .par_chunks(64)
            .map(|chunk| {
                let mut out = Vec::new();
                for (tag, tube) in chunk {
                    let cells = tube_cells_in_window(tube, grid, w_lo, w_hi)?;
                    out.extend(cells.into_iter().map(|c| (c, *tag)));
                }
                Ok(out)
            })
            .collect();
        let mut pairs = Vec::new();
        for r in chunk_results {
            pairs.extend(r?);
        }
        pairs.sort_unstable();
        let mut i = 0;
        let mut tags = Vec::new();
        while i < pairs.len() {
            let cell = pairs[i].0;
            tags.clear();
            while i < pairs.len() && pairs[i].0 == cell {
                tags.push(pairs[i].1);
                i += 1;
            }
            f(cell, &tags)?;
        }
    }
    Ok(())
}

/// Like [`scan_incidence`] but over explicit per-tube cell lists (shadings).
/// Cell lists must live on `grid`.
pub fn scan_incidence_cells<F>(
    _grid: &Arc<VoxelGrid>,
    shadings: &[(u32, &[u64])],
    mut f: F,
) -> Result<()>
where
    F: FnMut(u64, &[u32]) -> Result<()>,
{
    let mut pairs = Vec::new();
    for (tag, cells) in shadings {
        pairs.extend(cells.iter().map(|&c| (c, *tag)));
    }
    pairs.sort_unstable();
    let mut i = 0;
    let mut tags = Vec::new();
    while i < pairs.len() {
        let cell = pairs[i].0;
        tags.clear();
        while i < pairs.len() && pairs[i].0 == cell {
            tags.push(pairs[i].1);
            i += 1;
        }
        f(cell, &tags)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::voxelize_tube;

    #[test]
    fn incidence_matches_direct_rasterization() {
        let g = VoxelGrid::new(3, 1.0 / 16.0).unwrap();
        let t1 = Tube::new(0, 3, [0.0; 4], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let t2 = Tube::new(1, 3, [0.0; 4], [0.0, 1.0, 0.0, 0.0], 0.125).unwrap();
        let refs = vec![(0u32, &t1), (1u32, &t2)];
        let mut seen = std::collections::BTreeMap::new();
        scan_incidence(&g, &refs, |cell, tags| {
            seen.insert(cell, tags.to_vec());
            Ok(())
        })
        .unwrap();
        let a = voxelize_tube(&t1, &g).unwrap();
        let b = voxelize_tube(&t2, &g).unwrap();
        for &c in a.cells() {
            assert!(seen[&c].contains(&0));
        }
        for &c in b.cells() {
            assert!(seen[&c].contains(&1));
        }
        let both = a.intersect(&b).unwrap();
        for &c in both.cells() {
            assert_eq!(seen[&c], vec![0, 1]);
        }
        let total: usize = seen.len();
        assert_eq!(total, a.union(&b).unwrap().len());
    }

    #[test]
    fn cells_are_visited_in_order() {
        let g = VoxelGrid::new(2, 1.0 / 8.0).unwrap();
        let t = Tube::new(0, 2, [0.0; 4], [0.8, 0.6, 0.0, 0.0], 0.25).unwrap();
        let refs = vec![(0u32, &t)];
        let mut last = None;
        scan_incidence(&g, &refs, |cell, _| {
            if let Some(prev) = last {
                assert!(cell > prev);
            }
            last = Some(cell);
            Ok(())
        })
        .unwrap();
        assert!(last.is_some());
    }
}
