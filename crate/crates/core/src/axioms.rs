//! Non-concentration constants certified from below over probe catalogs:
//! the prism (linear) constant, the semi-algebraic constant K_E, tube
//! counts near hypersurfaces, and essential distinctness.
//!
//! The supremum defining each constant ranges over all prisms or all
//! bounded-complexity sets and is not computable; every report here is a
//! certified lower bound attained by a stored witness probe, and adding
//! probes can only raise it.

use crate::arrange::Arrangement;
use crate::error::{Error, Result};
use crate::geom::{self, orthonormal_frame, Point, Tube};
use crate::grid::{voxelize_tube, VoxelGrid};
use crate::rng::Rng;
use crate::semialg::{measure_estimate, variety_neighborhood, Polynomial, SemiAlgebraicSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A rectangular prism probe: orthonormal axes, center, half-extents.
/// By convention axis 0 is the long (unit) direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrismProbe {
    pub center: Point,
    pub axes: [Point; 4],
    pub half: [f64; 4],
    pub description: String,
}

impl PrismProbe {
    /// Central-segment containment: a tube lies in the prism when both
    /// segment endpoints do. Tube radius padding is absorbed into the
    /// prism constant, matching the convention that a 1 x d x d x d prism
    /// holds exactly one d-tube.
    pub fn contains_segment(&self, t: &Tube) -> bool {
        let (p, q) = t.endpoints();
        for e in [p, q] {
            let w = geom::sub(&e, &self.center);
            for k in 0..t.dim {
                if geom::dot(&w, &self.axes[k]).abs() > self.half[k] + 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    /// t1 t2 t3 delta^{1-n} with t_i the transverse side lengths.
    pub fn count_bound(&self, dim: usize, delta: f64) -> f64 {
        let mut b = delta.powi(1 - dim as i32);
        for k in 1..dim {
            b *= 2.0 * self.half[k];
        }
        b
    }

    fn fitted_to_tube(t: &Tube, dims: &[f64; 4], label: &str) -> PrismProbe {
        let axes = orthonormal_frame(&t.direction, t.dim);
        let mut half = [0.0; 4];
        for k in 0..t.dim {
            half[k] = dims[k] / 2.0;
        }
        PrismProbe {
            center: t.center,
            axes,
            half,
            description: format!("{label} tube {}", t.id),
        }
    }
}

/// One probe evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe_id: u32,
    pub description: String,
    pub lambda: f64,
    pub count: u64,
    pub bound: f64,
    pub ratio: f64,
}

/// A certified lower bound for a non-concentration constant, with the
/// witness that attains it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxiomReport {
    pub records: Vec<ProbeRecord>,
    pub k_lower: f64,
    pub witness: Option<ProbeRecord>,
}

impl AxiomReport {
    fn from_records(records: Vec<ProbeRecord>) -> AxiomReport {
        let witness = records
            .iter()
            .filter(|r| r.ratio.is_finite())
            .max_by(|a, b| {
                a.ratio
                    .partial_cmp(&b.ratio)
                    .unwrap()
                    .then(b.probe_id.cmp(&a.probe_id))
            })
            .cloned();
        AxiomReport {
            k_lower: witness.as_ref().map(|w| w.ratio).unwrap_or(0.0),
            records,
            witness,
        }
    }
}

fn dyadic_dims(delta: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut t = delta;
    while t <= 1.0 {
        v.push(t);
        t *= 2.0;
    }
    v
}

/// Prism catalog: per-tube fitted prisms, dyadic slabs anchored at sampled
/// tubes, cluster-fitted prisms, and seeded random prisms.
fn prism_catalog(arr: &Arrangement, probes: u32, seed: u64) -> Vec<PrismProbe> {
    let delta = arr.delta;
    let dim = arr.dim;
    let mut out = Vec::new();
    let eligible: Vec<&Tube> = arr.axiom_eligible_tubes();

    // Fitted 1 x d x .. x d prism around every tube.
    for t in &eligible {
        out.push(PrismProbe::fitted_to_tube(
            t,
            &[1.0, delta, delta, delta],
            "fitted",
        ));
    }

    // Dyadic anchored prisms: transverse sides swept together.
    let mut rng = Rng::new(seed ^ 0x9a17);
    let anchors: Vec<&Tube> = if eligible.len() <= 64 {
        eligible.clone()
    } else {
        (0..64).map(|_| eligible[rng.below(eligible.len())]).collect()
    };
    for t in anchors {
        for s in dyadic_dims(delta) {
            if s >= 1.0 {
                continue;
            }
            out.push(PrismProbe::fitted_to_tube(
                t,
                &[1.0, s, s, s],
                "dyadic",
            ));
            // Slab-like: one wide transverse side.
            out.push(PrismProbe::fitted_to_tube(
                t,
                &[1.0, s, 1.0, 1.0],
                "slab",
            ));
        }
    }

    // Cluster-fitted: anchor direction, transverse extents from the tubes
    // within a dyadic angle.
    for _ in 0..16.min(eligible.len()) {
        let anchor = eligible[rng.below(eligible.len())];
        for ang_mult in [2.0, 8.0] {
            let ang = ang_mult * delta;
            let axes = orthonormal_frame(&anchor.direction, dim);
            let mut ext = [0.0f64; 4];
            let mut found = false;
            for t in &eligible {
                if geom::line_angle(&t.direction, &anchor.direction) > ang {
                    continue;
                }
                found = true;
                let (p, q) = t.endpoints();
                for e in [p, q] {
                    let w = geom::sub(&e, &anchor.center);
                    for k in 1..dim {
                        ext[k] = ext[k].max(geom::dot(&w, &axes[k]).abs());
                    }
                }
            }
            if found {
                let mut half = [0.5; 4];
                for k in 1..dim {
                    half[k] = (ext[k] + delta).min(1.0);
                }
                out.push(PrismProbe {
                    center: anchor.center,
                    axes,
                    half,
                    description: format!("cluster a={ang_mult}d tube {}", anchor.id),
                });
            }
        }
    }

    // Random prisms.
    for _ in 0..probes {
        let dir = rng.unit_vector(dim);
        let axes = orthonormal_frame(&dir, dim);
        let center = rng.point_in_ball(dim, 1.0);
        let dims = dyadic_dims(delta);
        let mut half = [0.5; 4];
        for h in half.iter_mut().take(dim).skip(1) {
            *h = dims[rng.below(dims.len())] / 2.0;
        }
        out.push(PrismProbe {
            center,
            axes,
            half,
            description: "random".into(),
        });
    }
    out
}

fn eval_prism(arr: &Arrangement, probe: &PrismProbe) -> (u64, f64) {
    let count = arr
        .axiom_eligible_tubes()
        .iter()
        .filter(|t| probe.contains_segment(t))
        .count() as u64;
    let bound = probe.count_bound(arr.dim, arr.delta);
    (count, bound)
}

/// Lower bound for the prism non-concentration constant: max over probed
/// prisms of count / (t1 t2 t3 delta^{1-n}), with 20 steps of coordinate
/// refinement around the best probe.
pub fn linear_wolff_constant(arr: &Arrangement, probes: u32, seed: u64) -> Result<AxiomReport> {
    if arr.is_empty() {
        return Ok(AxiomReport {
            records: vec![],
            k_lower: 0.0,
            witness: None,
        });
    }
    let catalog = prism_catalog(arr, probes, seed);
    let mut records: Vec<ProbeRecord> = catalog
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (count, bound) = eval_prism(arr, p);
            ProbeRecord {
                probe_id: i as u32,
                description: p.description.clone(),
                lambda: 1.0,
                count,
                bound,
                ratio: if count > 0 { count as f64 / bound } else { 0.0 },
            }
        })
        .collect();

    // Local refinement of the best probe: shrink or grow one transverse
    // side at a time, keeping improvements.
    if let Some(best_idx) = records
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.ratio.partial_cmp(&b.1.ratio).unwrap())
        .map(|(i, _)| i)
    {
        let mut best = catalog[best_idx].clone();
        let mut best_ratio = records[best_idx].ratio;
        for _ in 0..20 {
            let mut improved = false;
            for k in 1..arr.dim {
                for f in [0.5, 2.0] {
                    let mut cand = best.clone();
                    cand.half[k] = (cand.half[k] * f).clamp(arr.delta / 2.0, 1.0);
                    let (count, bound) = eval_prism(arr, &cand);
                    let r = if count > 0 { count as f64 / bound } else { 0.0 };
                    if r > best_ratio * (1.0 + 1e-12) {
                        best_ratio = r;
                        best = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        let (count, bound) = eval_prism(arr, &best);
        records.push(ProbeRecord {
            probe_id: records.len() as u32,
            description: format!("{} refined", best.description),
            lambda: 1.0,
            count,
            bound,
            ratio: best_ratio,
        });
    }
    Ok(AxiomReport::from_records(records))
}

/// A semi-algebraic probe with its sampled measure.
#[derive(Debug, Clone)]
pub struct SemiAlgProbe {
    pub set: SemiAlgebraicSet,
    pub measure: f64,
    pub measure_se: f64,
}

/// Built-in probe catalog for the semi-algebraic constant: tube
/// neighborhoods, hyperplane slabs, sphere and quadric shells, random
/// low-degree graphs; all with complexity at most `e_max`.
fn semialg_catalog(
    arr: &Arrangement,
    e_max: u32,
    probes: u32,
    seed: u64,
    extra: &[SemiAlgebraicSet],
) -> Result<Vec<SemiAlgebraicSet>> {
    let dim = arr.dim;
    let delta = arr.delta;
    let mut rng = Rng::new(seed ^ 0x5e71);
    let mut sets: Vec<SemiAlgebraicSet> = Vec::new();

    // Neighborhood of a few tubes: bounding cylinder as three inequalities
    // (degree 2 + 1 + 1 = 4).
    let eligible = arr.axiom_eligible_tubes();
    for _ in 0..4.min(eligible.len()) {
        let t = eligible[rng.below(eligible.len())];
        let r = 10.0 * delta;
        // |x - c|^2 - <x - c, v>^2 < r^2 and |<x - c, v>| < 1/2 + r
        let mut quad_terms = vec![([0u8; 4], r * r)];
        let c = t.center;
        let v = t.direction;
        // r^2 - |x|^2 + 2<x,c> - |c|^2 + (<x,v> - <c,v>)^2 > 0
        let mut lin = vec![([0u8; 4], -geom::norm2(&c))];
        for k in 0..dim {
            let mut e = [0u8; 4];
            e[k] = 2;
            lin.push((e, -1.0));
            let mut e1 = [0u8; 4];
            e1[k] = 1;
            lin.push((e1, 2.0 * c[k]));
        }
        quad_terms.extend(lin);
        let axial = {
            let mut terms = vec![([0u8; 4], -geom::dot(&c, &v))];
            for k in 0..dim {
                let mut e = [0u8; 4];
                e[k] = 1;
                terms.push((e, v[k]));
            }
            Polynomial::new(dim, terms)?
        };
        let quad = Polynomial::new(dim, quad_terms)?.add(&axial.mul(&axial)?)?;
        let hb = 0.5 + r;
        let ax_hi = Polynomial::constant(dim, hb).add(&axial.scale(-1.0))?;
        let ax_lo = Polynomial::constant(dim, hb).add(&axial)?;
        let set = SemiAlgebraicSet::new(
            dim,
            vec![],
            vec![quad, ax_hi, ax_lo],
            format!("tube-nbhd {}", t.id),
        );
        if set.complexity() <= e_max {
            sets.push(set);
        }
    }

    // Hyperplane slabs at dyadic widths.
    for w in dyadic_dims(delta).into_iter().take(4) {
        let n = rng.unit_vector(dim);
        let off = rng.range(-0.5, 0.5);
        let mut terms = vec![([0u8; 4], -off)];
        for k in 0..dim {
            let mut e = [0u8; 4];
            e[k] = 1;
            terms.push((e, n[k]));
        }
        let p = Polynomial::new(dim, terms)?;
        let set = variety_neighborhood(&p, w)?;
        if set.complexity() <= e_max {
            sets.push(set);
        }
    }

    // Sphere shells.
    for r in [0.5, 1.0] {
        let mut terms = vec![([0u8; 4], -r * r)];
        for k in 0..dim {
            let mut e = [0u8; 4];
            e[k] = 2;
            terms.push((e, 1.0));
        }
        let p = Polynomial::new(dim, terms)?;
        let set = variety_neighborhood(&p, 4.0 * delta)?;
        if set.complexity() <= e_max {
            sets.push(set);
        }
    }

    // The ruled quadric shell (the extremal example's carrier).
    if dim == 4 {
        let set = variety_neighborhood(&crate::arrange::ruled_quadric_polynomial(), 4.0 * delta)?;
        if set.complexity() <= e_max {
            sets.push(set);
        }
    }

    // Random low-degree graphs x_n = g(x_1..x_{n-1}), deg g <= 3.
    for _ in 0..probes {
        let mut terms = vec![];
        let mut e_last = [0u8; 4];
        e_last[dim - 1] = 1;
        terms.push((e_last, 1.0));
        for _ in 0..4 {
            let mut e = [0u8; 4];
            let mut deg = 0;
            for k in 0..dim - 1 {
                let d = rng.below(3) as u8;
                if deg + d <= 3 {
                    e[k] = d;
                    deg += d;
                }
            }
            terms.push((e, rng.range(-1.0, 1.0)));
        }
        let p = Polynomial::new(dim, terms)?;
        if p.degree() == 0 {
            continue;
        }
        let set = variety_neighborhood(&p, 4.0 * delta)?;
        if set.complexity() <= e_max {
            sets.push(set);
        }
    }

    for s in extra {
        if s.complexity() <= e_max {
            sets.push(s.clone());
        }
    }
    Ok(sets)
}

/// Configuration for `polynomial_wolff_constant`.
#[derive(Debug, Clone)]
pub struct PolyWolffConfig {
    pub e_max: u32,
    pub probes: u32,
    pub seed: u64,
    pub measure_samples: u64,
    pub user_sets: Vec<SemiAlgebraicSet>,
}

impl Default for PolyWolffConfig {
    fn default() -> Self {
        PolyWolffConfig {
            e_max: 12,
            probes: 8,
            seed: 0,
            measure_samples: 1_000_000,
            user_sets: vec![],
        }
    }
}

/// Per-complexity lower bounds for the semi-algebraic constant: for each
/// probe S and dyadic lambda, tubes with |T cap S| >= lambda |T| are counted
/// against |S| delta^{1-n} lambda^{-n}.
pub fn polynomial_wolff_constant(
    arr: &Arrangement,
    grid: &Arc<VoxelGrid>,
    cfg: &PolyWolffConfig,
) -> Result<AxiomReport> {
    if cfg.e_max > 12 {
        return Err(Error::Precondition("probe catalog caps E at 12".into()));
    }
    if arr.is_empty() {
        return Ok(AxiomReport {
            records: vec![],
            k_lower: 0.0,
            witness: None,
        });
    }
    let sets = semialg_catalog(arr, cfg.e_max, cfg.probes, cfg.seed, &cfg.user_sets)?;
    let dim = arr.dim;
    let delta = arr.delta;
    let eligible = arr.axiom_eligible_tubes();

    // Per-tube voxelizations once; intersection fractions per probe.
    let vox: Vec<_> = eligible
        .par_iter()
        .map(|t| voxelize_tube(t, grid))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut probe_id = 0u32;
    for set in &sets {
        let (measure, se) = measure_estimate(set, cfg.measure_samples, cfg.seed ^ 0x3f)?;
        if measure <= 0.0 {
            continue;
        }
        // Fraction of each tube's cells inside the probe.
        let fracs: Vec<f64> = vox
            .par_iter()
            .map(|cells| {
                if cells.is_empty() {
                    return 0.0;
                }
                let inside = cells
                    .centers()
                    .filter(|c| set.membership(c))
                    .count();
                inside as f64 / cells.len() as f64
            })
            .collect();
        for lambda in dyadic_dims(delta) {
            let count = fracs.iter().filter(|&&f| f >= lambda).count() as u64;
            let bound = measure * delta.powi(1 - dim as i32) * lambda.powi(-(dim as i32));
            records.push(ProbeRecord {
                probe_id,
                description: format!("{} (E<={}, |S|={measure:.3e}+-{se:.1e})",
                    set.description, set.complexity()),
                lambda,
                count,
                bound,
                ratio: if count > 0 { count as f64 / bound } else { 0.0 },
            });
        }
        probe_id += 1;
    }
    Ok(AxiomReport::from_records(records))
}

/// Count of tubes whose portion inside the ball hugs the variety:
/// T cap B nonempty and contained in the M delta neighborhood of Z(P).
pub fn hypersurface_concentration(
    arr: &Arrangement,
    grid: &Arc<VoxelGrid>,
    p: &Polynomial,
    ball: (Point, f64),
    m_factor: f64,
) -> Result<(u64, f64, f64)> {
    if p.is_zero() || p.degree() == 0 {
        return Err(Error::Domain("need a nonconstant polynomial".into()));
    }
    let (center, r) = ball;
    if !(arr.delta <= r && r <= 2.0) {
        return Err(Error::Domain(format!("ball radius {r} outside [delta, 2]")));
    }
    if geom::norm(&center) + r > geom::DOMAIN_RADIUS + 1e-12 {
        return Err(Error::Domain("ball sticks out of B(0,2)".into()));
    }
    let nbhd = variety_neighborhood(p, m_factor * arr.delta)?;
    let r2 = r * r;
    let count = arr
        .axiom_eligible_tubes()
        .par_iter()
        .map(|t| {
            let cells = voxelize_tube(t, grid)?;
            let mut any = false;
            for c in cells.centers() {
                if geom::norm2(&geom::sub(&c, &center)) <= r2 {
                    if !nbhd.membership(&c) {
                        return Ok(0u64);
                    }
                    any = true;
                }
            }
            Ok(u64::from(any))
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    let bound = (arr.delta / r) * arr.delta.powi(2 - arr.dim as i32);
    Ok((count, bound, count as f64 / bound))
}
