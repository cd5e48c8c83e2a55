//! Evaluators for the quantities the volume bounds control — union volume,
//! L^p norms, dyadic multiplicity, trilinear and multilinear functionals,
//! the planar L^2 overlap bound — and the ratio-check engine that compares
//! them against their model right-hand sides.

use crate::arrange::Arrangement;
use crate::cells::{scan_incidence, scan_incidence_cells};
use crate::error::{Error, Result};
use crate::geom::{wedge3, Tube};
use crate::grid::{DenseBits, VoxelGrid, VoxelSet};
use crate::rng::Kahan;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// Per-cell incidence lists above this length abort the trilinear scan.
pub const INCIDENCE_CAP: usize = 4096;

fn shading_refs(arr: &Arrangement) -> Vec<(u32, &[u64])> {
    arr.shadings
        .values()
        .map(|s| (s.tube_id, s.cells.cells()))
        .collect()
}

fn require_shading_grid(arr: &Arrangement, grid: &Arc<VoxelGrid>) -> Result<()> {
    for s in arr.shadings.values() {
        grid.require_same(s.cells.grid())?;
    }
    Ok(())
}

/// Measure of the union of shadings (full tubes when no shading is
/// attached). Exact on the grid: a dense bitmap OR over per-tube cells.
pub fn union_volume(arr: &Arrangement, grid: &Arc<VoxelGrid>) -> Result<f64> {
    let bits = DenseBits::for_grid(grid);
    if arr.shadings.is_empty() {
        let results: Vec<Result<()>> = arr
            .tubes
            .par_chunks(64)
            .map(|chunk| {
                for t in chunk {
                    let cells = crate::grid::tube_cells_in_window(t, grid, 0, grid.per_axis())?;
                    bits.set_all(&cells);
                }
                Ok(())
            })
            .collect();
        for r in results {
            r?;
        }
    } else {
        require_shading_grid(arr, grid)?;
        for s in arr.shadings.values() {
            bits.set_all(s.cells.cells());
        }
    }
    Ok(bits.count_ones() as f64 * grid.cell_volume())
}

/// (sum_cells h^n m(cell)^p)^(1/p) where m counts tubes covering the cell.
pub fn lp_norm(arr: &Arrangement, grid: &Arc<VoxelGrid>, p: f64) -> Result<f64> {
    if p < 1.0 {
        return Err(Error::Domain(format!("exponent {p} below 1")));
    }
    let refs: Vec<(u32, &Tube)> = arr
        .tubes
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u32, t))
        .collect();
    let mut acc = Kahan::default();
    scan_incidence(grid, &refs, |_, tags| {
        acc.add((tags.len() as f64).powf(p));
        Ok(())
    })?;
    Ok((acc.value() * grid.cell_volume()).powf(1.0 / p))
}

/// The per-cell multiplicity field of the shadings, with the dominant
/// dyadic class extracted by shading mass.
#[derive(Debug, Clone)]
pub struct MultiplicityField {
    pub grid: Arc<VoxelGrid>,
    /// Sorted by cell index.
    pub entries: Vec<(u64, u32)>,
    /// Dyadic value 2^k of the dominant class.
    pub mu: f64,
    /// Cells of the dominant class.
    pub class_cells: VoxelSet,
    /// Fraction of total shading mass carried by the dominant class.
    pub mass_retention: f64,
    /// No shading cells at all.
    pub empty: bool,
}

/// Dyadic pigeonhole of cell multiplicities over the shadings; ties go to
/// the smaller class.
pub fn multiplicity(arr: &Arrangement) -> Result<MultiplicityField> {
    let grid = arr
        .shading_grid()
        .ok_or_else(|| Error::Precondition("multiplicity needs shadings".into()))?;
    require_shading_grid(arr, &grid)?;
    let refs = shading_refs(arr);
    let mut entries = Vec::new();
    scan_incidence_cells(&grid, &refs, |cell, tags| {
        entries.push((cell, tags.len() as u32));
        Ok(())
    })?;
    if entries.is_empty() {
        return Ok(MultiplicityField {
            grid: grid.clone(),
            entries,
            mu: 0.0,
            class_cells: VoxelSet::empty(grid),
            mass_retention: 0.0,
            empty: true,
        });
    }
    let mut class_mass: BTreeMap<u32, u64> = BTreeMap::new();
    for (_, m) in &entries {
        let k = (*m as f64).log2().floor() as u32;
        *class_mass.entry(k).or_insert(0) += *m as u64;
    }
    let total: u64 = class_mass.values().sum();
    let kept = class_mass
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
        .expect("nonempty");
    let class_cells: Vec<u64> = entries
        .iter()
        .filter(|(_, m)| (*m as f64).log2().floor() as u32 == kept)
        .map(|(c, _)| *c)
        .collect();
    let mass_retention = class_mass[&kept] as f64 / total as f64;
    Ok(MultiplicityField {
        grid: grid.clone(),
        entries,
        mu: (1u64 << kept) as f64,
        class_cells: VoxelSet::from_sorted(grid, class_cells),
        mass_retention,
        empty: false,
    })
}

/// Wedge memo keyed by an index triple; values are pure functions of the
/// directions, so lookup order does not affect results.
struct WedgeMemo<'a> {
    dirs: Vec<&'a [f64; 4]>,
    cache: HashMap<(u32, u32, u32), f64>,
}

impl<'a> WedgeMemo<'a> {
    fn new(dirs: Vec<&'a [f64; 4]>) -> Self {
        WedgeMemo {
            dirs,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, i: u32, j: u32, k: u32) -> Result<f64> {
        if let Some(v) = self.cache.get(&(i, j, k)) {
            return Ok(*v);
        }
        let w = wedge3(
            self.dirs[i as usize],
            self.dirs[j as usize],
            self.dirs[k as usize],
        )?;
        self.cache.insert((i, j, k), w);
        Ok(w)
    }
}

/// Integral of (sum over ordered tube triples through x of
/// |v1^v2^v3|^{12/13})^{13/27}. Triples with a repeated tube contribute
/// nothing (dependent directions), so the sum runs over distinct unordered
/// triples times 6.
pub fn trilinear_functional(arr: &Arrangement, grid: &Arc<VoxelGrid>) -> Result<f64> {
    if arr.dim != 4 {
        return Err(Error::Precondition("trilinear functional needs R^4".into()));
    }
    let refs: Vec<(u32, &Tube)> = arr
        .tubes
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u32, t))
        .collect();
    let mut memo = WedgeMemo::new(arr.tubes.iter().map(|t| &t.direction).collect());
    let mut acc = Kahan::default();
    scan_incidence(grid, &refs, |cell, tags| {
        let m = tags.len();
        if m > INCIDENCE_CAP {
            return Err(Error::Resource(format!(
                "cell {cell} holds {m} tubes, cap is {INCIDENCE_CAP}"
            )));
        }
        if m < 3 {
            return Ok(());
        }
        let mut cell_sum = Kahan::default();
        for a in 0..m {
            for b in (a + 1)..m {
                for c in (b + 1)..m {
                    let w = memo.get(tags[a], tags[b], tags[c])?;
                    if w > 0.0 {
                        cell_sum.add(6.0 * w.powf(12.0 / 13.0));
                    }
                }
            }
        }
        acc.add(cell_sum.value().powf(13.0 / 27.0));
        Ok(())
    })?;
    Ok(acc.value() * grid.cell_volume())
}

/// Integral of (sum over one tube from each family of chi chi chi wedge)^{1/2}.
pub fn multilinear_kakeya_lhs(
    fams: [&Arrangement; 3],
    grid: &Arc<VoxelGrid>,
) -> Result<f64> {
    for f in fams {
        if f.dim != 4 {
            return Err(Error::Precondition("multilinear bound needs R^4".into()));
        }
    }
    if fams.iter().any(|f| f.is_empty()) {
        return Ok(0.0);
    }
    // Pack family in the top 2 bits of the tag.
    let mut tubes: Vec<(u32, &Tube)> = Vec::new();
    let mut dirs = Vec::new();
    let mut fam_offsets = [0u32; 3];
    for (fi, f) in fams.iter().enumerate() {
        fam_offsets[fi] = dirs.len() as u32;
        for t in &f.tubes {
            tubes.push(((fi as u32) << 30 | dirs.len() as u32, t));
            dirs.push(&t.direction);
        }
    }
    let mut memo = WedgeMemo::new(dirs);
    let mut acc = Kahan::default();
    scan_incidence(grid, &tubes, |_, tags| {
        let mut by_fam: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for &tag in tags {
            by_fam[(tag >> 30) as usize].push(tag & 0x3fff_ffff);
        }
        if by_fam.iter().any(|v| v.is_empty()) {
            return Ok(());
        }
        let mut cell_sum = Kahan::default();
        for &a in &by_fam[0] {
            for &b in &by_fam[1] {
                for &c in &by_fam[2] {
                    cell_sum.add(memo.get(a, b, c)?);
                }
            }
        }
        acc.add(cell_sum.value().max(0.0).sqrt());
        Ok(())
    })?;
    Ok(acc.value() * grid.cell_volume())
}

#[derive(Debug, Clone)]
pub struct CordobaResult {
    pub l2_norm: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// L^2 norm of the strip multiplicity on a planar grid against the
/// overlap-sum model theta^{1/2} E^{1/2} |strips|^{1/2}.
pub fn cordoba_l2(strips: &[VoxelSet], e_const: f64, theta: f64) -> Result<CordobaResult> {
    if strips.is_empty() {
        return Ok(CordobaResult {
            l2_norm: 0.0,
            bound: 0.0,
            ratio: 0.0,
        });
    }
    let grid = strips[0].grid().clone();
    if grid.dim() != 2 {
        return Err(Error::Precondition("strips must live on a 2d grid".into()));
    }
    for s in strips {
        grid.require_same(s.grid())?;
    }
    let refs: Vec<(u32, &[u64])> = strips
        .iter()
        .enumerate()
        .map(|(i, s)| (i as u32, s.cells()))
        .collect();
    let mut acc = Kahan::default();
    scan_incidence_cells(&grid, &refs, |_, tags| {
        let m = tags.len() as f64;
        acc.add(m * m);
        Ok(())
    })?;
    let l2 = (acc.value() * grid.cell_volume()).sqrt();
    let bound = theta.sqrt() * e_const.sqrt() * (strips.len() as f64).sqrt();
    Ok(CordobaResult {
        l2_norm: l2,
        bound,
        ratio: if bound > 0.0 { l2 / bound } else { 0.0 },
    })
}

/// Inequality identifiers for the check engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckName {
    /// Union volume vs lambda^{3+1/28} K^{-1} delta^{1-1/28+eps} (delta^3 |T|).
    VolumeMain,
    /// Union volume vs lambda^{3+1/4} K^{-1/4} theta delta^{3/4+eps} (delta^3 |T|)^{1/4}.
    VolumeTrilinear,
    /// Union volume vs lambda^3 K^{-1} theta^{-1/6} delta^{1+eps} (delta^3 |T|).
    VolumePlany,
    /// mu vs lambda^{-1/2} delta^{-1} (delta^3 |T|)^{1/2}.
    WolffMultiplicity,
    /// mu_theta vs lambda^{-1} theta^{-1} E^{1/2} D^{1/4} rho^{1/4} (theta^3 |T|)^{1/4}.
    SmallHairbrush,
    /// Hairbrush residual volume vs lambda^2 theta^2 mu_theta max(E^{-1}, D^{-1}).
    HairbrushVolume,
    /// mu vs mu_fine * mu_coarse.
    FineCoarseMu,
    /// mu vs theta^{-1} B^{-1} mu_fine.
    MuPlaneBound,
    /// mu vs lambda^{-1/2} delta^{-1} A^{-1/2} B^{-1} (delta^3 |T|)^{1/2}.
    MuEstOne,
    /// mu vs lambda^{-11/6} theta^{1/3} delta^{-1} A^{1/2} B^{1/3} (delta^3 |T|)^{-1/6}.
    MuEstTwo,
    /// Trilinear integral vs delta^{-1/3-eps} K^{1/9} (delta^3 |T|)^{4/3}.
    TrilinearK19,
    /// Same with the weaker K^{-1} constant.
    TrilinearKInv,
    /// (int (sum chi chi chi wedge)^{1/2}) vs delta^4 (|T1||T2||T3|)^{1/2}.
    MultilinearKakeya,
    /// Quadric extremal: union volume vs delta.
    QuadricVolume,
    /// Flat concentration: union volume vs delta^{n-l}.
    FlatVolume,
}

impl CheckName {
    pub fn parse(s: &str) -> Result<CheckName> {
        use CheckName::*;
        Ok(match s {
            "volume_main" => VolumeMain,
            "volume_trilinear" => VolumeTrilinear,
            "volume_plany" => VolumePlany,
            "wolff_multiplicity" => WolffMultiplicity,
            "small_hairbrush" => SmallHairbrush,
            "hairbrush_volume" => HairbrushVolume,
            "fine_coarse_mu" => FineCoarseMu,
            "mu_plane_bound" => MuPlaneBound,
            "mu_est_one" => MuEstOne,
            "mu_est_two" => MuEstTwo,
            "trilinear_k19" => TrilinearK19,
            "trilinear_kinv" => TrilinearKInv,
            "multilinear_kakeya" => MultilinearKakeya,
            "quadric_volume" => QuadricVolume,
            "flat_volume" => FlatVolume,
            other => return Err(Error::Domain(format!("unknown check `{other}`"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        use CheckName::*;
        match self {
            VolumeMain => "volume_main",
            VolumeTrilinear => "volume_trilinear",
            VolumePlany => "volume_plany",
            WolffMultiplicity => "wolff_multiplicity",
            SmallHairbrush => "small_hairbrush",
            HairbrushVolume => "hairbrush_volume",
            FineCoarseMu => "fine_coarse_mu",
            MuPlaneBound => "mu_plane_bound",
            MuEstOne => "mu_est_one",
            MuEstTwo => "mu_est_two",
            TrilinearK19 => "trilinear_k19",
            TrilinearKInv => "trilinear_kinv",
            MultilinearKakeya => "multilinear_kakeya",
            QuadricVolume => "quadric_volume",
            FlatVolume => "flat_volume",
        }
    }

    /// Model exponent of delta controlling this check's LHS at unit
    /// normalization, when one exists (used for slope comparisons).
    pub fn reference_slope(&self) -> Option<f64> {
        match self {
            CheckName::QuadricVolume => Some(1.0),
            CheckName::FlatVolume => Some(2.0),
            _ => None,
        }
    }
}

/// Measured symbols a check may consume. Missing required symbols produce a
/// `MissingInput` error naming the symbol.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Quantities {
    pub values: BTreeMap<String, f64>,
}

impl Quantities {
    pub fn set(&mut self, k: &str, v: f64) -> &mut Self {
        self.values.insert(k.to_string(), v);
        self
    }

    pub fn get(&self, k: &str) -> Result<f64> {
        self.values
            .get(k)
            .copied()
            .ok_or_else(|| Error::MissingInput(k.to_string()))
    }

    pub fn get_or(&self, k: &str, default: f64) -> f64 {
        self.values.get(k).copied().unwrap_or(default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    VacuousPass,
}

/// Outcome of one inequality check; `ratio = lhs / rhs` with the constant
/// set to 1, and the verdict tests the ratio against a configured band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub inputs: Quantities,
    pub band: (f64, f64),
    pub verdict: Verdict,
}

fn result(name: CheckName, lhs: f64, rhs: f64, inputs: Quantities, band: (f64, f64)) -> CheckResult {
    let tubes = inputs.get_or("tubes", f64::NAN);
    let vacuous = lhs == 0.0 && (tubes == 0.0);
    let ratio = if rhs > 0.0 { lhs / rhs } else { f64::NAN };
    let verdict = if vacuous {
        Verdict::VacuousPass
    } else if ratio.is_finite() && ratio >= band.0 && ratio <= band.1 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    CheckResult {
        name: name.as_str().to_string(),
        lhs,
        rhs,
        ratio,
        inputs,
        band,
        verdict,
    }
}

/// Default acceptance band: ratios are reported, not thresholded hard, so
/// the band is wide; scaling studies judge stability across delta instead.
pub const DEFAULT_BAND: (f64, f64) = (0.0, f64::INFINITY);

/// Assemble the RHS for `name` from measured quantities and compare.
///
/// Expected symbols (subset per check): `delta`, `lambda`, `theta`, `k`,
/// `tubes`, `theta_tubes`, `a`, `b`, `d_planes`, `e_prisms`, `rho`,
/// `mu`, `mu_theta`, `mu_fine`, `mu_coarse`, `eps`, `lhs`.
pub fn check(name: CheckName, q: &Quantities, band: (f64, f64)) -> Result<CheckResult> {
    use CheckName::*;
    let lhs = q.get("lhs")?;
    let eps = q.get_or("eps", 0.05);
    let rhs = match name {
        VolumeMain => {
            let (delta, lambda, k, t) = (
                q.get("delta")?,
                q.get("lambda")?,
                q.get("k")?,
                q.get("tubes")?,
            );
            lambda.powf(3.0 + 1.0 / 28.0)
                * k.recip()
                * delta.powf(1.0 - 1.0 / 28.0 + eps)
                * (delta.powi(3) * t)
        }
        VolumeTrilinear => {
            let (delta, lambda, k, t, theta) = (
                q.get("delta")?,
                q.get("lambda")?,
                q.get("k")?,
                q.get("tubes")?,
                q.get("theta")?,
            );
            lambda.powf(3.25) * k.powf(-0.25) * theta * delta.powf(0.75 + eps)
                * (delta.powi(3) * t).powf(0.25)
        }
        VolumePlany => {
            let (delta, lambda, k, t, theta) = (
                q.get("delta")?,
                q.get("lambda")?,
                q.get("k")?,
                q.get("tubes")?,
                q.get("theta")?,
            );
            lambda.powi(3) * k.recip() * theta.powf(-1.0 / 6.0) * delta.powf(1.0 + eps)
                * (delta.powi(3) * t)
        }
        WolffMultiplicity => {
            let (delta, lambda, t) = (q.get("delta")?, q.get("lambda")?, q.get("tubes")?);
            lambda.powf(-0.5) * delta.recip() * (delta.powi(3) * t).sqrt()
        }
        SmallHairbrush => {
            let (lambda, theta, e, d, rho, t) = (
                q.get("lambda")?,
                q.get("theta")?,
                q.get("e_prisms")?,
                q.get("d_planes")?,
                q.get("rho")?,
                q.get("theta_tubes")?,
            );
            lambda.recip() * theta.recip() * e.sqrt() * d.powf(0.25) * rho.powf(0.25)
                * (theta.powi(3) * t).powf(0.25)
        }
        HairbrushVolume => {
            let (lambda, theta, mu_t, e, d) = (
                q.get("lambda")?,
                q.get("theta")?,
                q.get("mu_theta")?,
                q.get("e_prisms")?,
                q.get("d_planes")?,
            );
            lambda.powi(2) * theta.powi(2) * mu_t * (e.recip()).max(d.recip())
        }
        FineCoarseMu => q.get("mu_fine")? * q.get("mu_coarse")?,
        MuPlaneBound => q.get("theta")?.recip() * q.get("b")?.recip() * q.get("mu_fine")?,
        MuEstOne => {
            let (delta, lambda, a, b, t) = (
                q.get("delta")?,
                q.get("lambda")?,
                q.get("a")?,
                q.get("b")?,
                q.get("tubes")?,
            );
            lambda.powf(-0.5) * delta.recip() * a.powf(-0.5) * b.recip()
                * (delta.powi(3) * t).sqrt()
        }
        MuEstTwo => {
            let (delta, lambda, theta, a, b, t) = (
                q.get("delta")?,
                q.get("lambda")?,
                q.get("theta")?,
                q.get("a")?,
                q.get("b")?,
                q.get("tubes")?,
            );
            lambda.powf(-11.0 / 6.0) * theta.powf(1.0 / 3.0) * delta.recip() * a.sqrt()
                * b.powf(1.0 / 3.0)
                * (delta.powi(3) * t).powf(-1.0 / 6.0)
        }
        TrilinearK19 => {
            let (delta, k, t) = (q.get("delta")?, q.get("k")?, q.get("tubes")?);
            delta.powf(-1.0 / 3.0 - eps) * k.powf(1.0 / 9.0) * (delta.powi(3) * t).powf(4.0 / 3.0)
        }
        TrilinearKInv => {
            let (delta, k, t) = (q.get("delta")?, q.get("k")?, q.get("tubes")?);
            delta.powf(-1.0 / 3.0 - eps) * k.recip() * (delta.powi(3) * t).powf(4.0 / 3.0)
        }
        MultilinearKakeya => {
            let (delta, t1, t2, t3) = (
                q.get("delta")?,
                q.get("tubes1")?,
                q.get("tubes2")?,
                q.get("tubes3")?,
            );
            delta.powi(4) * (t1 * t2 * t3).sqrt()
        }
        QuadricVolume => q.get("delta")?,
        FlatVolume => {
            let (delta, n, l) = (q.get("delta")?, q.get("dim")?, q.get("flat_dim")?);
            delta.powf(n - l)
        }
    };
    Ok(result(name, lhs, rhs, q.clone(), band))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrange::{gen_bush, Arrangement};
    use crate::grid::voxelize_tube;

    fn orthogonal_triple(delta: f64) -> Arrangement {
        let t1 = Tube::new(0, 4, [0.0; 4], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let t2 = Tube::new(1, 4, [0.0; 4], [0.0, 1.0, 0.0, 0.0], delta).unwrap();
        let t3 = Tube::new(2, 4, [0.0; 4], [0.0, 0.0, 1.0, 0.0], delta).unwrap();
        Arrangement::new(4, delta, vec![t1, t2, t3], 0, "orthogonal").unwrap()
    }

    #[test]
    fn union_volume_single_tube_matches_oracle() {
        let delta = 0.125;
        let t = Tube::new(0, 4, [0.0; 4], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let arr = Arrangement::new(4, delta, vec![t.clone()], 0, "one").unwrap();
        let g = VoxelGrid::new(4, delta / 2.0).unwrap();
        let v = union_volume(&arr, &g).unwrap();
        let mc = crate::grid::tube_volume_montecarlo(&t, 400_000, 7);
        assert!((v - mc).abs() / mc < 0.2, "grid {v} vs oracle {mc}");
    }

    #[test]
    fn union_volume_empty_and_disjoint() {
        let g = VoxelGrid::new(4, 1.0 / 16.0).unwrap();
        let empty = Arrangement::new(4, 0.125, vec![], 0, "empty").unwrap();
        assert_eq!(union_volume(&empty, &g).unwrap(), 0.0);

        let t1 = Tube::new(0, 4, [0.0, -0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let t2 = Tube::new(1, 4, [0.0, 0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let (v1, v2) = (
            voxelize_tube(&t1, &g).unwrap().measure(),
            voxelize_tube(&t2, &g).unwrap().measure(),
        );
        let arr = Arrangement::new(4, 0.125, vec![t1, t2], 0, "disjoint").unwrap();
        let v = union_volume(&arr, &g).unwrap();
        assert!((v - v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn union_bounded_by_shading_mass_sum() {
        let mut arr = gen_bush([0.0; 4], 8, 4, 0.125, 3).unwrap();
        let g = VoxelGrid::new(4, 1.0 / 16.0).unwrap();
        arr.shade_full(&g).unwrap();
        let v = union_volume(&arr, &g).unwrap();
        let total = arr.total_shading_mass();
        assert!(v <= total + 1e-12);
        assert!(v < total, "bush shadings overlap at the core");
    }

    #[test]
    fn lp_norm_indicator_and_homogeneity() {
        let delta = 0.125;
        let p = 85.0 / 57.0;
        let t = Tube::new(0, 4, [0.0; 4], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let g = VoxelGrid::new(4, delta / 2.0).unwrap();
        let vol = voxelize_tube(&t, &g).unwrap().measure();
        let arr = Arrangement::new(4, delta, vec![t.clone()], 0, "one").unwrap();
        let n1 = lp_norm(&arr, &g, p).unwrap();
        assert!((n1 - vol.powf(1.0 / p)).abs() < 1e-12);

        // m coincident tubes scale the norm by exactly m.
        let m = 5u32;
        let copies: Vec<Tube> = (0..m)
            .map(|i| {
                let mut c = t.clone();
                c.id = i;
                c
            })
            .collect();
        let arr_m = Arrangement::new(4, delta, copies, 0, "stack").unwrap();
        let nm = lp_norm(&arr_m, &g, p).unwrap();
        assert!((nm - m as f64 * n1).abs() < 1e-9 * nm);
    }

    #[test]
    fn multiplicity_bush_and_disjoint() {
        let count = 24;
        let delta = 0.125;
        let mut bush = gen_bush([0.0; 4], count, 4, delta, 5).unwrap();
        let g = VoxelGrid::new(4, delta / 2.0).unwrap();
        bush.shade_full(&g).unwrap();
        let f = multiplicity(&bush).unwrap();
        // Core cells see ~count tubes even though the dominant mass class
        // sits lower; the field maximum reflects the bush.
        let max_m = f.entries.iter().map(|(_, m)| *m).max().unwrap();
        assert!(
            max_m as usize >= count * 3 / 4,
            "core multiplicity {max_m} for count {count}"
        );
        assert!(f.mass_retention >= 1.0 / (2.0 * (1.0 / delta).log2() + 4.0));

        let t1 = Tube::new(0, 4, [0.0, -0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let t2 = Tube::new(1, 4, [0.0, 0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let mut arr = Arrangement::new(4, delta, vec![t1, t2], 0, "disjoint").unwrap();
        arr.shade_full(&g).unwrap();
        let f = multiplicity(&arr).unwrap();
        assert_eq!(f.mu, 1.0);
        assert_eq!(f.class_cells.len(), f.entries.len());
        assert!((f.mass_retention - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trilinear_single_tube_is_zero() {
        let delta = 0.125;
        let t = Tube::new(0, 4, [0.0; 4], [1.0, 0.0, 0.0, 0.0], delta).unwrap();
        let arr = Arrangement::new(4, delta, vec![t], 0, "one").unwrap();
        let g = VoxelGrid::new(4, delta / 2.0).unwrap();
        assert_eq!(trilinear_functional(&arr, &g).unwrap(), 0.0);
    }

    #[test]
    fn trilinear_orthogonal_triple_matches_direct_integration() {
        // LHS = 6^{13/27} * |T1 cap T2 cap T3|; the overlap volume oracle is
        // a Riemann sum over the bounding box of the triple intersection.
        let delta = 0.125;
        let arr = orthogonal_triple(delta);
        let g = VoxelGrid::new(4, delta / 4.0).unwrap();
        let lhs = trilinear_functional(&arr, &g).unwrap();

        let res = 80;
        let step = 2.0 * delta / res as f64;
        let mut overlap = 0.0;
        for i0 in 0..res {
            for i1 in 0..res {
                for i2 in 0..res {
                    for i3 in 0..res {
                        let x = [
                            -delta + (i0 as f64 + 0.5) * step,
                            -delta + (i1 as f64 + 0.5) * step,
                            -delta + (i2 as f64 + 0.5) * step,
                            -delta + (i3 as f64 + 0.5) * step,
                        ];
                        if arr.tubes.iter().all(|t| t.contains(&x)) {
                            overlap += step.powi(4);
                        }
                    }
                }
            }
        }
        let expect = 6.0f64.powf(13.0 / 27.0) * overlap;
        assert!(
            (lhs - expect).abs() / expect < 0.1,
            "lhs {lhs} vs direct {expect} (overlap {overlap})"
        );
    }

    #[test]
    fn multilinear_orthogonal_families_and_empty() {
        let delta = 0.125;
        let arr = orthogonal_triple(delta);
        let g = VoxelGrid::new(4, delta / 4.0).unwrap();
        let single = |id: u32| {
            Arrangement::new(
                4,
                delta,
                vec![arr.tubes[id as usize].clone()],
                0,
                "f",
            )
            .unwrap()
        };
        let (f1, f2, f3) = (single(0), single(1), single(2));
        let lhs = multilinear_kakeya_lhs([&f1, &f2, &f3], &g).unwrap();
        // wedge = 1, so LHS = overlap volume; ratio against delta^4.
        let ratio = lhs / delta.powi(4);
        assert!(ratio > 1.0 && ratio < 40.0, "ratio {ratio}");

        let empty = Arrangement::new(4, delta, vec![], 0, "none").unwrap();
        assert_eq!(
            multilinear_kakeya_lhs([&f1, &empty, &f3], &g).unwrap(),
            0.0
        );
    }

    #[test]
    fn multilinear_brute_force_equivalence() {
        // Recompute the same pointwise-sqrt form by direct per-cell triple
        // loops over full tube lists; must agree exactly.
        let delta = 0.125;
        let mut fams = Vec::new();
        for f in 0..3u32 {
            let mut tubes = Vec::new();
            for i in 0..3u32 {
                let mut d = [0.0; 4];
                d[f as usize] = 1.0;
                d[3] = 0.05 * i as f64;
                let mut c = [0.0; 4];
                c[3] = 0.01 * i as f64;
                tubes.push(Tube::new(i, 4, c, d, delta).unwrap());
            }
            fams.push(Arrangement::new(4, delta, tubes, 0, format!("fam{f}")).unwrap());
        }
        let g = VoxelGrid::new(4, delta / 2.0).unwrap();
        let lhs = multilinear_kakeya_lhs([&fams[0], &fams[1], &fams[2]], &g).unwrap();

        let vox: Vec<Vec<VoxelSet>> = fams
            .iter()
            .map(|f| {
                f.tubes
                    .iter()
                    .map(|t| voxelize_tube(t, &g).unwrap())
                    .collect()
            })
            .collect();
        let mut acc = Kahan::default();
        let mut all_cells: Vec<u64> = vox
            .iter()
            .flatten()
            .flat_map(|v| v.cells().iter().copied())
            .collect();
        all_cells.sort_unstable();
        all_cells.dedup();
        for &cell in &all_cells {
            let mut s = Kahan::default();
            for (i, a) in vox[0].iter().enumerate() {
                if !a.contains(cell) {
                    continue;
                }
                for (j, b) in vox[1].iter().enumerate() {
                    if !b.contains(cell) {
                        continue;
                    }
                    for (k, c) in vox[2].iter().enumerate() {
                        if !c.contains(cell) {
                            continue;
                        }
                        s.add(
                            wedge3(
                                &fams[0].tubes[i].direction,
                                &fams[1].tubes[j].direction,
                                &fams[2].tubes[k].direction,
                            )
                            .unwrap(),
                        );
                    }
                }
            }
            acc.add(s.value().max(0.0).sqrt());
        }
        let brute = acc.value() * g.cell_volume();
        assert!(
            (lhs - brute).abs() <= 1e-12 * brute.max(1.0),
            "engine {lhs} vs brute {brute}"
        );
    }

    #[test]
    fn cordoba_strip_examples() {
        // One strip: L2 = sqrt(area); two identical strips: 2 sqrt(area).
        let g = VoxelGrid::new(2, 1.0 / 64.0).unwrap();
        let t = Tube::new(0, 2, [0.0; 4], [1.0, 0.0, 0.0, 0.0], 1.0 / 32.0).unwrap();
        let strip = voxelize_tube(&t, &g).unwrap();
        let area = strip.measure();
        let one = cordoba_l2(&[strip.clone()], 1.0, 1.0 / 32.0).unwrap();
        assert!((one.l2_norm - area.sqrt()).abs() < 1e-12);
        let two = cordoba_l2(&[strip.clone(), strip.clone()], 1.0, 1.0 / 32.0).unwrap();
        assert!((two.l2_norm - 2.0 * area.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cordoba_pinwheel_matches_overlap_oracle() {
        // N strips through the origin at theta-separated angles: the
        // squared L2 norm is area + sum of pairwise lens overlaps; compare
        // against the exact pairwise-overlap formula theta_w^2 / sin(angle).
        let theta_w = 1.0 / 32.0;
        let g = VoxelGrid::new(2, theta_w / 2.0).unwrap();
        let n = 6;
        let mut strips = Vec::new();
        let mut tubes = Vec::new();
        for i in 0..n {
            let a = std::f64::consts::PI * (i as f64 + 0.5) / (n as f64 * 2.0);
            let t = Tube::new(
                i as u32,
                2,
                [0.0; 4],
                [a.cos(), a.sin(), 0.0, 0.0],
                theta_w,
            )
            .unwrap();
            strips.push(voxelize_tube(&t, &g).unwrap());
            tubes.push(t);
        }
        let got = cordoba_l2(&strips, 1.0, theta_w).unwrap();
        let mut expect2 = 0.0;
        for (i, si) in strips.iter().enumerate() {
            expect2 += si.measure();
            for j in (i + 1)..n {
                let ang = crate::geom::line_angle(&tubes[i].direction, &tubes[j].direction);
                // Parallelogram overlap of two infinite strips of width 2w.
                expect2 += 2.0 * (2.0 * theta_w) * (2.0 * theta_w) / ang.sin();
            }
        }
        let ratio = got.l2_norm.powi(2) / expect2;
        assert!(
            ratio > 0.25 && ratio < 4.0,
            "l2^2 {} vs overlap model {expect2}",
            got.l2_norm.powi(2)
        );
    }

    #[test]
    fn check_engine_assembles_rhs_and_flags_missing() {
        let mut q = Quantities::default();
        q.set("lhs", 0.5)
            .set("delta", 0.125)
            .set("lambda", 1.0)
            .set("k", 2.0)
            .set("tubes", 512.0);
        let r = check(CheckName::VolumeMain, &q, DEFAULT_BAND).unwrap();
        let expect = 1.0f64.powf(3.0 + 1.0 / 28.0)
            * 0.5
            * 0.125f64.powf(1.0 - 1.0 / 28.0 + 0.05)
            * (0.125f64.powi(3) * 512.0);
        assert!((r.rhs - expect).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);

        let mut missing = Quantities::default();
        missing.set("lhs", 1.0).set("delta", 0.125);
        match check(CheckName::VolumeMain, &missing, DEFAULT_BAND) {
            Err(Error::MissingInput(s)) => assert_eq!(s, "lambda"),
            other => panic!("expected MissingInput, got {other:?}"),
        }
    }

    #[test]
    fn check_empty_arrangement_is_vacuous() {
        let mut q = Quantities::default();
        q.set("lhs", 0.0)
            .set("delta", 0.125)
            .set("lambda", 1.0)
            .set("k", 1.0)
            .set("tubes", 0.0);
        let r = check(CheckName::VolumeMain, &q, DEFAULT_BAND).unwrap();
        assert_eq!(r.verdict, Verdict::VacuousPass);
    }

    #[test]
    fn trilinear_reports_both_constant_variants() {
        let mut q = Quantities::default();
        q.set("lhs", 1.0)
            .set("delta", 0.125)
            .set("k", 4.0)
            .set("tubes", 512.0);
        let a = check(CheckName::TrilinearK19, &q, DEFAULT_BAND).unwrap();
        let b = check(CheckName::TrilinearKInv, &q, DEFAULT_BAND).unwrap();
        assert!(a.rhs > b.rhs, "K^{{1/9}} bound is the larger one");
    }
}
