//! Numerical laboratory for delta-tube arrangements in R^2..R^4.
//!
//! The crate voxelizes tube arrangements on an exact h-lattice over B(0,2),
//! generates the structured arrangements of interest (direction-separated,
//! quadric rulings, flats, bushes), estimates non-concentration constants
//! over probe catalogs, evaluates the volume / L^p / trilinear functionals
//! those constants control, decomposes cube sets into grains via recursive
//! hyperplane partitioning, and runs the structural reductions used in
//! multi-scale analysis. Everything is deterministic in the seed, including
//! parallel reductions.

pub mod arrange;
pub mod axioms;
pub mod cells;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod geom;
pub mod grains;
pub mod grid;
pub mod io;
pub mod reduce;
pub mod rng;
pub mod semialg;

pub use error::{Error, Result};
