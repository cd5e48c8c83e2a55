//! Semi-algebraic sets with complexity accounting: membership, quasi-Monte
//! Carlo measure, calibrated variety neighborhoods, and connected components
//! of tube-region intersections on the voxel graph.

use crate::error::{Error, Result};
use crate::geom::{self, Point, Tube};
use crate::grid::{self, VoxelSet};
use crate::rng::{halton_point, halton_shift, Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard cap on total degree of any stored polynomial.
pub const MAX_DEGREE: u32 = 8;
/// Tolerance for equality constraints in membership tests.
pub const TAU_EQ: f64 = 1e-9;
/// Lower clamp on the gradient calibration in variety neighborhoods.
pub const G_MIN: f64 = 1e-3;

/// Dense-by-monomial polynomial in up to four variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    /// Sorted by exponent tuple; coefficients are nonzero.
    terms: Vec<([u8; 4], f64)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<([u8; 4], f64)>) -> Result<Polynomial> {
        if !(1..=4).contains(&dim) {
            return Err(Error::Domain(format!("polynomial dim {dim} not in 1..=4")));
        }
        let mut map = std::collections::BTreeMap::new();
        for (e, c) in terms {
            let deg: u32 = e.iter().map(|&x| x as u32).sum();
            if deg > MAX_DEGREE {
                return Err(Error::Domain(format!(
                    "monomial degree {deg} exceeds cap {MAX_DEGREE}"
                )));
            }
            for k in dim..4 {
                if e[k] != 0 {
                    return Err(Error::Domain(
                        "exponent on a variable beyond the dimension".into(),
                    ));
                }
            }
            *map.entry(e).or_insert(0.0) += c;
        }
        let terms: Vec<_> = map.into_iter().filter(|(_, c)| *c != 0.0).collect();
        Ok(Polynomial { dim, terms })
    }

    pub fn zero(dim: usize) -> Polynomial {
        Polynomial { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Polynomial {
        Polynomial::new(dim, vec![([0; 4], c)]).expect("constant term is valid")
    }

    /// The coordinate polynomial x_k.
    pub fn coordinate(dim: usize, k: usize) -> Polynomial {
        let mut e = [0u8; 4];
        e[k] = 1;
        Polynomial::new(dim, vec![(e, 1.0)]).expect("linear term is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[([u8; 4], f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().map(|&x| x as u32).sum())
            .max()
            .unwrap_or(0)
    }

    /// Evaluation with compensated summation over monomials.
    pub fn eval(&self, p: &Point) -> f64 {
        let mut acc = crate::rng::Kahan::default();
        for (e, c) in &self.terms {
            let mut m = *c;
            for k in 0..self.dim {
                if e[k] > 0 {
                    m *= p[k].powi(e[k] as i32);
                }
            }
            acc.add(m);
        }
        acc.value()
    }

    pub fn partial(&self, k: usize) -> Polynomial {
        let mut terms = Vec::new();
        for (e, c) in &self.terms {
            if e[k] > 0 {
                let mut e2 = *e;
                e2[k] -= 1;
                terms.push((e2, c * e[k] as f64));
            }
        }
        Polynomial::new(self.dim, terms).expect("derivative stays under the cap")
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.dim).map(|k| self.partial(k)).collect()
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: if s == 0.0 {
                vec![]
            } else {
                self.terms.iter().map(|(e, c)| (*e, c * s)).collect()
            },
        }
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Polynomial::new(self.dim.max(other.dim), terms)
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = [e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2], e1[3] + e2[3]];
                terms.push((e, c1 * c2));
            }
        }
        Polynomial::new(self.dim.max(other.dim), terms)
    }

    pub fn grad_norm(&self, p: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            let v = self.partial(k).eval(p);
            s += v * v;
        }
        s.sqrt()
    }
}

/// Conjunction of polynomial equalities and strict inequalities, with the
/// total-degree complexity of this representation. The abstract complexity
/// is a minimum over representations, so the stored value is an upper bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemiAlgebraicSet {
    pub dim: usize,
    pub equalities: Vec<Polynomial>,
    pub inequalities: Vec<Polynomial>,
    pub description: String,
}

impl SemiAlgebraicSet {
    pub fn new(
        dim: usize,
        equalities: Vec<Polynomial>,
        inequalities: Vec<Polynomial>,
        description: impl Into<String>,
    ) -> SemiAlgebraicSet {
        SemiAlgebraicSet {
            dim,
            equalities,
            inequalities,
            description: description.into(),
        }
    }

    pub fn complexity(&self) -> u32 {
        let s: u32 = self
            .equalities
            .iter()
            .chain(self.inequalities.iter())
            .map(|p| p.degree())
            .sum();
        s.max(1)
    }

    pub fn membership(&self, p: &Point) -> bool {
        self.equalities.iter().all(|q| q.eval(p).abs() <= TAU_EQ)
            && self.inequalities.iter().all(|q| q.eval(p) > 0.0)
    }

    /// The ball B(0,r): one inequality of degree 2.
    pub fn ball(dim: usize, r: f64) -> SemiAlgebraicSet {
        let mut terms = vec![([0u8; 4], r * r)];
        for k in 0..dim {
            let mut e = [0u8; 4];
            e[k] = 2;
            terms.push((e, -1.0));
        }
        SemiAlgebraicSet::new(
            dim,
            vec![],
            vec![Polynomial::new(dim, terms).unwrap()],
            format!("ball r={r}"),
        )
    }

    pub fn intersection(&self, other: &SemiAlgebraicSet) -> SemiAlgebraicSet {
        let mut eqs = self.equalities.clone();
        eqs.extend(other.equalities.iter().cloned());
        let mut ineqs = self.inequalities.clone();
        ineqs.extend(other.inequalities.iter().cloned());
        SemiAlgebraicSet::new(
            self.dim.max(other.dim),
            eqs,
            ineqs,
            format!("{} & {}", self.description, other.description),
        )
    }

    /// Rectangular prism given by an orthonormal frame, center, and
    /// half-extents: 2*dim linear inequalities.
    pub fn prism(
        dim: usize,
        center: &Point,
        axes: &[Point; 4],
        half: &[f64; 4],
    ) -> SemiAlgebraicSet {
        let mut ineqs = Vec::new();
        for k in 0..dim {
            // half_k - <x - c, a_k> > 0 and half_k + <x - c, a_k> > 0
            for sign in [1.0, -1.0] {
                let mut terms = vec![([0u8; 4], half[k] + sign * geom::dot(center, &axes[k]))];
                for j in 0..dim {
                    let mut e = [0u8; 4];
                    e[j] = 1;
                    terms.push((e, -sign * axes[k][j]));
                }
                ineqs.push(Polynomial::new(dim, terms).unwrap());
            }
        }
        SemiAlgebraicSet::new(dim, vec![], ineqs, "prism".to_string())
    }
}

/// Quasi-Monte Carlo Lebesgue measure over the bounding box [-2,2]^dim.
///
/// Halton points with a seeded rotation; blocks are summed in index order so
/// the result is identical for any thread count.
pub fn measure_estimate(set: &SemiAlgebraicSet, samples: u64, seed: u64) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(Error::Precondition(format!(
            "need at least 1e3 samples, got {samples}"
        )));
    }
    let dim = set.dim;
    let shift = halton_shift(seed);
    let side = 2.0 * geom::DOMAIN_RADIUS;
    let vol_box = side.powi(dim as i32);
    const BLOCK: u64 = 8192;
    let blocks = samples.div_ceil(BLOCK);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(samples);
            let mut h = 0u64;
            for i in lo..hi {
                let u = halton_point(i, dim, &shift);
                let mut p = [0.0; 4];
                for k in 0..dim {
                    p[k] = -geom::DOMAIN_RADIUS + side * u[k];
                }
                if set.membership(&p) {
                    h += 1;
                }
            }
            h
        })
        .sum();
    let p_hat = hits as f64 / samples as f64;
    let est = vol_box * p_hat;
    let se = vol_box * (p_hat * (1.0 - p_hat) / samples as f64).sqrt();
    Ok((est, se))
}

/// Gradient-calibrated neighborhood of the zero set of `p`:
/// `{ x : P(x)^2 < w^2 (|grad P(x)|^2 + G_MIN^2) }`.
///
/// The smooth clamp keeps the set described by a single polynomial
/// inequality of degree 2 deg P; true distance to Z(P) is matched to first
/// order, and `audit_variety_neighborhood` quantifies the error.
pub fn variety_neighborhood(p: &Polynomial, width: f64) -> Result<SemiAlgebraicSet> {
    if p.is_zero() || p.degree() == 0 {
        return Err(Error::Domain(
            "variety neighborhood needs a nonconstant polynomial".into(),
        ));
    }
    if width <= 0.0 {
        return Err(Error::Domain("width must be positive".into()));
    }
    let w2 = width * width;
    let mut q = Polynomial::constant(p.dim(), w2 * G_MIN * G_MIN);
    for g in p.gradient() {
        q = q.add(&g.mul(&g)?.scale(w2))?;
    }
    q = q.add(&p.mul(p)?.scale(-1.0))?;
    Ok(SemiAlgebraicSet::new(
        p.dim(),
        vec![],
        vec![q],
        format!("N_{width}(Z), deg {}", p.degree()),
    ))
}

/// Approximate distance from `x` to Z(P) by damped Newton steps along the
/// gradient. Used as the audit oracle for `variety_neighborhood`.
pub fn distance_to_variety(p: &Polynomial, x: &Point, iters: u32) -> Option<f64> {
    let grads = p.gradient();
    let mut z = *x;
    for _ in 0..iters {
        let v = p.eval(&z);
        let mut g = [0.0; 4];
        let mut gn2 = 0.0;
        for (k, gp) in grads.iter().enumerate() {
            g[k] = gp.eval(&z);
            gn2 += g[k] * g[k];
        }
        if gn2 < 1e-18 {
            return None;
        }
        let step = v / gn2;
        z = geom::axpy(&z, -step, &g);
        if v.abs() < 1e-13 {
            break;
        }
    }
    if p.eval(&z).abs() > 1e-7 {
        return None;
    }
    Some(geom::norm(&geom::sub(&z, x)))
}

/// Fraction of sample points where the calibrated membership test agrees
/// with the projected-gradient distance oracle.
pub fn audit_variety_neighborhood(
    p: &Polynomial,
    width: f64,
    samples: u32,
    seed: u64,
) -> Result<f64> {
    let set = variety_neighborhood(p, width)?;
    let mut rng = Rng::new(seed);
    let mut agree = 0u32;
    let mut counted = 0u32;
    while counted < samples {
        let x = rng.point_in_ball(p.dim(), geom::DOMAIN_RADIUS);
        let oracle = match distance_to_variety(p, &x, 40) {
            Some(d) => d <= width,
            None => continue,
        };
        counted += 1;
        if set.membership(&x) == oracle {
            agree += 1;
        }
    }
    Ok(agree as f64 / samples as f64)
}

pub const COMPONENT_CAP: usize = 64;

/// Connected components of `tube` against `region` under face adjacency.
#[derive(Debug, Clone)]
pub struct Components {
    /// (cells, diameter) pairs, ordered by smallest cell index.
    pub parts: Vec<(VoxelSet, f64)>,
    /// Component count exceeded [`COMPONENT_CAP`]; a warning, not an error.
    pub cap_exceeded: bool,
}

pub fn connected_components(tube: &Tube, region: &VoxelSet) -> Result<Components> {
    let grid = region.grid().clone();
    let tube_cells = grid::voxelize_tube(tube, &grid)?;
    let cells = tube_cells.intersect(region)?;
    let idx: std::collections::HashMap<u64, usize> = cells
        .cells()
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();
    let n = cells.len();
    let mut visited = vec![false; n];
    let mut parts = Vec::new();
    let dim = grid.dim();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut queue = vec![start];
        visited[start] = true;
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            let c = cells.cells()[i];
            members.push(c);
            let coords = grid.coords_of_index(c);
            for k in 0..dim {
                for step in [-1i64, 1] {
                    let mut nb = coords;
                    nb[k] += step;
                    if let Some(j) = grid.index_of_coords(&nb).and_then(|ci| idx.get(&ci)) {
                        if !visited[*j] {
                            visited[*j] = true;
                            queue.push(*j);
                        }
                    }
                }
            }
        }
        members.sort_unstable();
        let vs = VoxelSet::from_sorted(grid.clone(), members);
        let d = component_diameter(&vs);
        parts.push((vs, d));
    }
    parts.sort_by_key(|(vs, _)| vs.cells().first().copied().unwrap_or(u64::MAX));
    let cap_exceeded = parts.len() > COMPONENT_CAP;
    Ok(Components {
        parts,
        cap_exceeded,
    })
}

/// Max pairwise center distance; exact for small components, multi-start
/// double sweep above 2048 cells.
fn component_diameter(vs: &VoxelSet) -> f64 {
    let centers: Vec<Point> = vs.centers().collect();
    let n = centers.len();
    if n <= 1 {
        return 0.0;
    }
    if n <= 2048 {
        let mut best = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(geom::norm2(&geom::sub(&centers[i], &centers[j])));
            }
        }
        return best.sqrt();
    }
    let mut best = 0.0f64;
    for &start in &[0usize, n / 2, n - 1] {
        let mut cur = start;
        for _ in 0..4 {
            let mut far = cur;
            let mut far_d = 0.0f64;
            for (j, c) in centers.iter().enumerate() {
                let d = geom::norm2(&geom::sub(c, &centers[cur]));
                if d > far_d {
                    far_d = d;
                    far = j;
                }
            }
            best = best.max(far_d);
            cur = far;
        }
    }
    best.sqrt()
}

/// A grain: the `width`-neighborhood of a low-degree variety together with
/// its voxel realization.
#[derive(Debug, Clone)]
pub struct Grain {
    pub base: SemiAlgebraicSet,
    pub width: f64,
    pub description: String,
    pub cells: VoxelSet,
    pub trace: Vec<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;

    fn poly(dim: usize, terms: &[([u8; 4], f64)]) -> Polynomial {
        Polynomial::new(dim, terms.to_vec()).unwrap()
    }

    fn sphere_poly(dim: usize, r: f64) -> Polynomial {
        let mut terms = vec![([0u8; 4], -r * r)];
        for k in 0..dim {
            let mut e = [0u8; 4];
            e[k] = 2;
            terms.push((e, 1.0));
        }
        poly(dim, &terms)
    }

    #[test]
    fn eval_and_degree() {
        // 3 x^2 y - y + 1
        let p = poly(
            2,
            &[([2, 1, 0, 0], 3.0), ([0, 1, 0, 0], -1.0), ([0, 0, 0, 0], 1.0)],
        );
        assert_eq!(p.degree(), 3);
        let v = p.eval(&[2.0, 0.5, 0.0, 0.0]);
        assert!((v - (3.0 * 4.0 * 0.5 - 0.5 + 1.0)).abs() < 1e-12);
        let dx = p.partial(0);
        assert!((dx.eval(&[2.0, 0.5, 0.0, 0.0]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn ball_measure_matches_closed_form() {
        // |B(0,1)| = pi^2/2 in R^4.
        let s = SemiAlgebraicSet::ball(4, 1.0);
        assert_eq!(s.complexity(), 2);
        let (est, se) = measure_estimate(&s, 1_000_000, 9).unwrap();
        let expect = std::f64::consts::PI.powi(2) / 2.0;
        assert!(
            (est - expect).abs() <= 3.0 * se + 0.01 * expect,
            "est {est} expect {expect} se {se}"
        );
    }

    #[test]
    fn empty_set_measures_zero() {
        // x1 - 1 > 0 and -x1 - 1 > 0 is contradictory.
        let x = Polynomial::coordinate(3, 0);
        let minus_one = Polynomial::constant(3, -1.0);
        let s = SemiAlgebraicSet::new(
            3,
            vec![],
            vec![
                x.add(&minus_one).unwrap(),
                x.scale(-1.0).add(&minus_one).unwrap(),
            ],
            "empty",
        );
        let (est, _) = measure_estimate(&s, 10_000, 3).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn slab_measure_matches_oracle() {
        // N_w({x4 = 0}) cap B(0,1) has measure ~ 2 w vol(B^3) for small w.
        let w = 1.0 / 64.0;
        let nb = variety_neighborhood(&Polynomial::coordinate(4, 3), w).unwrap();
        let s = nb.intersection(&SemiAlgebraicSet::ball(4, 1.0));
        let (est, se) = measure_estimate(&s, 2_000_000, 5).unwrap();
        let expect = 2.0 * w * geom::unit_ball_volume(3);
        assert!(
            (est - expect).abs() <= 3.0 * se + 0.02 * expect,
            "est {est} expect {expect} se {se}"
        );
    }

    #[test]
    fn measure_deterministic_and_monotone() {
        let inner = SemiAlgebraicSet::ball(3, 0.7);
        let outer = SemiAlgebraicSet::ball(3, 1.0);
        let (a1, se1) = measure_estimate(&inner, 200_000, 7).unwrap();
        let (a2, _) = measure_estimate(&inner, 200_000, 7).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
        let (b, se2) = measure_estimate(&outer, 200_000, 7).unwrap();
        assert!(a1 <= b + 3.0 * (se1 + se2));
    }

    #[test]
    fn linear_variety_neighborhood_is_slab() {
        let w = 0.25;
        let nb = variety_neighborhood(&Polynomial::coordinate(4, 3), w).unwrap();
        assert_eq!(nb.complexity(), 2);
        let mut rng = Rng::new(2);
        for _ in 0..2000 {
            let x = rng.point_in_ball(4, 2.0);
            // The smooth clamp shifts the boundary by ~5e-7 w; sample away
            // from the edge.
            if (x[3].abs() - w).abs() < 1e-5 {
                continue;
            }
            assert_eq!(nb.membership(&x), x[3].abs() < w);
        }
    }

    #[test]
    fn sphere_shell_audit_passes() {
        // Distance oracle is exact for spheres, so agreement must be >= 99%.
        let p = sphere_poly(4, 1.0);
        let rate = audit_variety_neighborhood(&p, 1.0 / 16.0, 10_000, 11).unwrap();
        assert!(rate >= 0.99, "audit rate {rate}");
    }

    #[test]
    fn membership_invariant_under_positive_scaling() {
        let p = sphere_poly(3, 1.0);
        let nb1 = variety_neighborhood(&p, 0.05).unwrap();
        let nb2 = variety_neighborhood(&p.scale(37.5), 0.05).unwrap();
        let mut rng = Rng::new(4);
        for _ in 0..2000 {
            let x = rng.point_in_ball(3, 2.0);
            if nb1.membership(&x) != nb2.membership(&x) {
                let d = (geom::norm(&x) - 1.0).abs();
                assert!((d - 0.05).abs() < 1e-4, "disagreement far from boundary");
            }
        }
    }

    #[test]
    fn zero_polynomial_rejected() {
        assert!(variety_neighborhood(&Polynomial::zero(3), 0.1).is_err());
        assert!(variety_neighborhood(&Polynomial::constant(3, 2.0), 0.1).is_err());
    }

    #[test]
    fn components_disjoint_region_empty() {
        let g = VoxelGrid::new(3, 1.0 / 16.0).unwrap();
        let t = Tube::new(0, 3, [0.0, -0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let far = Tube::new(1, 3, [0.0, 0.8, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let region = grid::voxelize_tube(&far, &g).unwrap();
        let cc = connected_components(&t, &region).unwrap();
        assert!(cc.parts.is_empty());
    }

    #[test]
    fn components_full_tube_is_one_piece() {
        let g = VoxelGrid::new(3, 1.0 / 16.0).unwrap();
        let t = Tube::new(0, 3, [0.0; 4], [1.0, 0.0, 0.0, 0.0], 0.125).unwrap();
        let region = grid::voxelize_tube(&t, &g).unwrap();
        let cc = connected_components(&t, &region).unwrap();
        assert_eq!(cc.parts.len(), 1);
        let d = cc.parts[0].1;
        assert!(
            (d - t.length).abs() < 2.5 * t.radius,
            "diameter {d} vs length {}",
            t.length
        );
        // Partition exactness: the single part reproduces the input.
        assert_eq!(cc.parts[0].0.cells(), region.cells());
    }

    #[test]
    fn components_chord_through_shell_gives_two() {
        // Spherical shell around |x| = 0.375, tube through the middle: entry
        // and exit crossings are separate components. (Unit tube reaches
        // |x1| <= 0.5625, so the shell must sit inside that.)
        let g = VoxelGrid::new(3, 1.0 / 32.0).unwrap();
        let shell = variety_neighborhood(&sphere_poly(3, 0.375), 1.0 / 16.0).unwrap();
        let all = VoxelSet::from_cells(
            g.clone(),
            (0..g.cell_count())
                .filter(|&i| shell.membership(&g.cell_center(i)))
                .collect(),
        );
        let t = Tube::new(0, 3, [0.0; 4], [1.0, 0.0, 0.0, 0.0], 1.0 / 16.0).unwrap();
        let cc = connected_components(&t, &all).unwrap();
        assert_eq!(cc.parts.len(), 2, "expect entry and exit crossings");
        let u = cc.parts[0].0.union(&cc.parts[1].0).unwrap();
        let direct = grid::voxelize_tube(&t, &g)
            .unwrap()
            .intersect(&all)
            .unwrap();
        assert_eq!(u.cells(), direct.cells());
        assert!(!cc.parts[0].0.intersects(&cc.parts[1].0));
    }

    #[test]
    fn components_grid_too_coarse_errors() {
        let g1 = VoxelGrid::new(3, 1.0 / 16.0).unwrap();
        let region_coarse = VoxelSet::empty(g1);
        let t_small = Tube::new(1, 3, [0.0; 4], [1.0, 0.0, 0.0, 0.0], 1.0 / 64.0).unwrap();
        assert!(connected_components(&t_small, &region_coarse).is_err());
    }
}
