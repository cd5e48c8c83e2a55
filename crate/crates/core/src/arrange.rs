//! Arrangement generators and structural constructions on tube families:
//! direction-separated families, quadric rulings, flat concentrations,
//! bushes, random sparsification, fat/thin two-scale decomposition, and
//! cylinder rescaling.

use crate::error::{Error, Result};
use crate::geom::{self, orthonormal_frame, MapKind, Point, RigidMap, Tube};
use crate::grid::{voxelize_tube, VoxelGrid, VoxelSet};
use crate::rng::{halton_point, halton_shift, Rng};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A shading: a voxel subset of one tube; `lambda` is its density relative
/// to the tube volume.
#[derive(Debug, Clone)]
pub struct Shading {
    pub tube_id: u32,
    pub cells: VoxelSet,
    pub lambda: f64,
}

impl Shading {
    pub fn full(tube: &Tube, grid: &Arc<VoxelGrid>) -> Result<Shading> {
        let cells = voxelize_tube(tube, grid)?;
        let lambda = cells.measure() / tube.analytic_volume();
        Ok(Shading {
            tube_id: tube.id,
            cells,
            lambda,
        })
    }

    pub fn from_cells(tube: &Tube, cells: VoxelSet) -> Shading {
        let lambda = cells.measure() / tube.analytic_volume();
        Shading {
            tube_id: tube.id,
            cells,
            lambda,
        }
    }
}

/// A finite tube family at one scale, with optional shadings.
#[derive(Debug, Clone)]
pub struct Arrangement {
    pub dim: usize,
    pub delta: f64,
    pub tubes: Vec<Tube>,
    pub shadings: BTreeMap<u32, Shading>,
    pub seed: u64,
    pub provenance: String,
}

impl Arrangement {
    pub fn new(
        dim: usize,
        delta: f64,
        tubes: Vec<Tube>,
        seed: u64,
        provenance: impl Into<String>,
    ) -> Result<Arrangement> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &tubes {
            if t.dim != dim {
                return Err(Error::Domain("tube dimension mismatch".into()));
            }
            if (t.radius - delta).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "tube {} radius {} differs from arrangement scale {delta}",
                    t.id, t.radius
                )));
            }
            if !seen.insert(t.id) {
                return Err(Error::Domain(format!("duplicate tube id {}", t.id)));
            }
        }
        Ok(Arrangement {
            dim,
            delta,
            tubes,
            shadings: BTreeMap::new(),
            seed,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    pub fn tube(&self, id: u32) -> Result<&Tube> {
        self.tubes
            .iter()
            .find(|t| t.id == id)
            .ok_or(Error::UnknownId(id))
    }

    /// Tubes that keep at least half their nominal length after clipping;
    /// only these enter axiom statistics.
    pub fn axiom_eligible_tubes(&self) -> Vec<&Tube> {
        self.tubes.iter().filter(|t| t.axiom_eligible()).collect()
    }

    /// Default grid for this scale (h = delta/2, degraded under budget).
    pub fn default_grid(&self) -> Result<Arc<VoxelGrid>> {
        VoxelGrid::for_scale(self.dim, self.delta)
    }

    /// Attach full-tube shadings on `grid`.
    pub fn shade_full(&mut self, grid: &Arc<VoxelGrid>) -> Result<()> {
        let mut map = BTreeMap::new();
        for t in &self.tubes {
            map.insert(t.id, Shading::full(t, grid)?);
        }
        self.shadings = map;
        Ok(())
    }

    pub fn shading_grid(&self) -> Option<Arc<VoxelGrid>> {
        self.shadings.values().next().map(|s| s.cells.grid().clone())
    }

    pub fn total_shading_mass(&self) -> f64 {
        self.shadings.values().map(|s| s.cells.measure()).sum()
    }

    /// Max over tubes of how many tubes sit inside its 10 delta
    /// neighborhood (self included), via segment distance tests.
    pub fn essential_distinctness(&self) -> u32 {
        let d = self.delta;
        let mut worst = 0u32;
        for a in &self.tubes {
            let mut count = 0u32;
            for b in &self.tubes {
                // b inside N_{10d}(a) iff every point of b's segment plus its
                // radius is within 10d + a.radius of a's segment; endpoints
                // suffice by convexity.
                let (p, q) = b.endpoints();
                let lim = 10.0 * d + a.radius - b.radius;
                if lim > 0.0
                    && a.dist2_to_segment(&p).sqrt() <= lim
                    && a.dist2_to_segment(&q).sqrt() <= lim
                {
                    count += 1;
                }
            }
            worst = worst.max(count);
        }
        worst
    }
}

/// Greedy maximal packing of directions with pairwise line-angle >= delta,
/// capped at `target`. Returns canonical-sign unit vectors.
fn separated_directions(dim: usize, delta: f64, target: usize, rng: &mut Rng) -> Vec<Point> {
    let mut dirs: Vec<Point> = Vec::new();
    let cos_sep = delta.cos();
    let mut consecutive_rejects = 0;
    while dirs.len() < target && consecutive_rejects < 4000 {
        let mut v = rng.unit_vector(dim);
        for k in 0..dim {
            if v[k].abs() > geom::UNIT_TOL {
                if v[k] < 0.0 {
                    v = geom::scale(&v, -1.0);
                }
                break;
            }
        }
        let ok = dirs.iter().all(|u| geom::dot(u, &v).abs() < cos_sep);
        if ok {
            dirs.push(v);
            consecutive_rejects = 0;
        } else {
            consecutive_rejects += 1;
        }
    }
    dirs
}

/// One tube per delta-separated direction cap, centers uniform in B(0,1).
pub fn gen_direction_separated(dim: usize, delta: f64, seed: u64) -> Result<Arrangement> {
    if !(1.0 / 64.0..=0.25).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta {delta} outside [1/64, 1/4]"
        )));
    }
    let mut rng = Rng::new(seed);
    let target = (4.0 * delta.powi(1 - dim as i32)).ceil() as usize;
    let dirs = separated_directions(dim, delta, target, &mut rng);
    let mut tubes = Vec::with_capacity(dirs.len());
    for (i, d) in dirs.iter().enumerate() {
        let c = rng.point_in_ball(dim, 1.0);
        tubes.push(Tube::new(i as u32, dim, c, *d, delta)?);
    }
    Arrangement::new(dim, delta, tubes, seed, "direction-separated")
}

/// Coefficients of q(x) = x1^2 + x2^2 - x3^2 - x4^2; its unit level set is
/// the doubly ruled hypersurface used by the extremal construction.
pub fn ruled_quadric_polynomial() -> crate::semialg::Polynomial {
    use crate::semialg::Polynomial;
    let mut terms = vec![([0u8; 4], -1.0)];
    for (k, s) in [(0usize, 1.0), (1, 1.0), (2, -1.0), (3, -1.0)] {
        let mut e = [0u8; 4];
        e[k] = 2;
        terms.push((e, s));
    }
    Polynomial::new(4, terms).expect("quadric coefficients are valid")
}

/// Tubes along rulings of {x1^2 + x2^2 - x3^2 - x4^2 = 1} with O(delta)
/// jitter. The ruling through p = (cosh t * u(alpha), sinh t * u(beta)) in
/// direction ((cos,sin)(phi), (cos,sin)(psi))/sqrt(2) stays on the surface
/// exactly when cos(phi - alpha) = tanh(t) cos(gamma) and psi = beta +- gamma.
pub fn gen_quadric(delta: f64, seed: u64) -> Result<Arrangement> {
    let dim = 4;
    let count = (1.0 / delta.powi(3)).round() as u64;
    let shift = halton_shift(seed ^ 0x51ad);
    let mut rng = Rng::new(seed);
    let mut tubes = Vec::with_capacity(count as usize);
    for i in 0..count {
        let u = halton_point(i, 4, &shift);
        let t = -0.4 + 0.8 * u[0];
        let alpha = std::f64::consts::TAU * u[1];
        let beta = std::f64::consts::TAU * u[2];
        let gamma = std::f64::consts::TAU * u[3];
        let (ch, sh) = (t.cosh(), t.sinh());
        let p = [ch * alpha.cos(), ch * alpha.sin(), sh * beta.cos(), sh * beta.sin()];
        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        let phi = alpha + sign * (t.tanh() * gamma.cos()).clamp(-1.0, 1.0).acos();
        let sign2 = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        let psi = beta + sign2 * gamma;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = [s * phi.cos(), s * phi.sin(), s * psi.cos(), s * psi.sin()];
        // O(delta) jitter on center and direction.
        let jc = rng.point_in_ball(dim, delta / 4.0);
        let jd = rng.point_in_ball(dim, delta / 4.0);
        let center = geom::add(&p, &jc);
        let dir = geom::add(&v, &jd);
        tubes.push(Tube::new(i as u32, dim, center, dir, delta)?);
    }
    Arrangement::new(dim, delta, tubes, seed, "quadric-rulings")
}

/// Random tubes inside the delta-neighborhood of the span of the first
/// `flat_dim` coordinates, directions within the flat up to angle ~delta.
pub fn gen_flat_concentration(
    flat_dim: usize,
    dim: usize,
    delta: f64,
    seed: u64,
) -> Result<Arrangement> {
    if flat_dim == 0 || flat_dim >= dim {
        return Err(Error::Domain(format!(
            "flat dimension {flat_dim} not in 1..{dim}"
        )));
    }
    let count = (1.0 / delta.powi(dim as i32 - 1)).round() as usize;
    let mut rng = Rng::new(seed);
    let mut tubes = Vec::with_capacity(count);
    for i in 0..count {
        let mut c = [0.0; 4];
        let inflat = rng.point_in_ball(flat_dim, 1.0);
        c[..flat_dim].copy_from_slice(&inflat[..flat_dim]);
        for ck in c.iter_mut().take(dim).skip(flat_dim) {
            *ck = rng.range(-delta / 4.0, delta / 4.0);
        }
        let mut d = rng.unit_vector(flat_dim);
        for k in flat_dim..dim {
            d[k] = rng.range(-delta / 2.0, delta / 2.0);
        }
        tubes.push(Tube::new(i as u32, dim, c, d, delta)?);
    }
    Arrangement::new(dim, delta, tubes, seed, format!("flat-{flat_dim}"))
}

/// Tubes through a common delta-ball with separated directions.
pub fn gen_bush(
    center: Point,
    count: usize,
    dim: usize,
    delta: f64,
    seed: u64,
) -> Result<Arrangement> {
    let cap = (1.0 / delta.powi(dim as i32 - 1)).round() as usize;
    if count > cap {
        return Err(Error::Domain(format!(
            "bush count {count} exceeds the {cap} direction caps at delta {delta}"
        )));
    }
    let mut rng = Rng::new(seed);
    let dirs = separated_directions(dim, delta, count, &mut rng);
    if dirs.len() < count {
        return Err(Error::Domain(format!(
            "direction packing saturated at {} < {count}",
            dirs.len()
        )));
    }
    let mut tubes = Vec::with_capacity(count);
    for (i, d) in dirs.iter().enumerate() {
        let jitter = rng.point_in_ball(dim, delta / 2.0);
        let c = geom::add(&center, &jitter);
        tubes.push(Tube::new(i as u32, dim, c, *d, delta)?);
    }
    Arrangement::new(dim, delta, tubes, seed, "bush")
}

/// Keep each tube independently with probability 1/(C*K). Shadings of kept
/// tubes are carried over.
pub fn random_sparsify(arr: &Arrangement, k: f64, c: f64, seed: u64) -> Result<Arrangement> {
    if k < 1.0 || c < 1.0 {
        return Err(Error::Domain("need K >= 1 and C >= 1".into()));
    }
    let p = 1.0 / (c * k);
    let mut rng = Rng::new(seed);
    let mut tubes = Vec::new();
    let mut shadings = BTreeMap::new();
    for t in &arr.tubes {
        if rng.bernoulli(p) {
            if let Some(s) = arr.shadings.get(&t.id) {
                shadings.insert(t.id, s.clone());
            }
            tubes.push(t.clone());
        }
    }
    let mut out = Arrangement::new(
        arr.dim,
        arr.delta,
        tubes,
        seed,
        format!("{}+sparsified", arr.provenance),
    )?;
    out.shadings = shadings;
    Ok(out)
}

/// One fat tube and the thin tubes assigned to it.
#[derive(Debug, Clone)]
pub struct FatTube {
    /// Central segment copied from the seed thin tube; radius is theta.
    pub tube: Tube,
    pub thin_ids: Vec<u32>,
}

/// Two-scale decomposition: coarse-scale tubes of radius theta (used via
/// their 10-fold dilates) holding the surviving thin tubes.
#[derive(Debug, Clone)]
pub struct FatThinDecomposition {
    pub theta: f64,
    pub fats: Vec<FatTube>,
    /// thin id -> index into `fats`.
    pub assignment: BTreeMap<u32, usize>,
    /// |fats| * theta^3.
    pub a_value: f64,
    /// Fraction of thin tubes retained by the assignment, before the
    /// per-fat dyadic pigeonhole.
    pub retention: f64,
    /// Dyadic class kept by the pigeonhole: fat tubes whose thin count lies
    /// in [2^k, 2^{k+1}).
    pub kept_class: u32,
}

/// Both endpoints of `t`'s segment within `lim` of `of`'s segment; with
/// `lim = theta` this is exactly `t` contained in the theta-neighborhood of
/// `of` (for equal thin radii).
fn tube_in_fat(t: &Tube, of: &Tube, lim: f64) -> bool {
    let (p, q) = t.endpoints();
    of.dist2_to_segment(&p) <= lim * lim && of.dist2_to_segment(&q) <= lim * lim
}

/// Greedy fat-tube selection: candidates are theta-neighborhoods of the
/// thin tubes ranked by how many thin tubes they contain; a candidate is
/// rejected when its core nests with an already accepted fat tube in either
/// direction, which keeps the selected family essentially distinct at scale
/// theta (so later constant-factor dilates stay essentially distinct too).
/// Thin tubes are assigned to the best accepted fat tube containing them,
/// then fat tubes are pigeonholed to the dominant dyadic class of thin
/// counts.
pub fn fatten_tubes(arr: &Arrangement, theta: f64) -> Result<FatThinDecomposition> {
    let delta = arr.delta;
    if theta < delta {
        return Err(Error::Domain(format!(
            "theta {theta} below tube scale {delta}"
        )));
    }
    let n = arr.tubes.len();
    let contain_lim = theta;
    // Thin-in-fat counts per candidate.
    let mut counts = vec![0u32; n];
    for (i, cand) in arr.tubes.iter().enumerate() {
        for t in &arr.tubes {
            if tube_in_fat(t, cand, contain_lim) {
                counts[i] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), arr.tubes[i].id));

    let mut accepted: Vec<usize> = Vec::new();
    for &i in &order {
        let cand = &arr.tubes[i];
        let nested = accepted.iter().any(|&j| {
            let f = &arr.tubes[j];
            tube_in_fat(cand, f, contain_lim) || tube_in_fat(f, cand, contain_lim)
        });
        if !nested {
            accepted.push(i);
        }
    }

    // Assignment: first accepted fat (descending count order) containing the
    // thin tube; tubes rejected for reverse nesting fall back to the nearest
    // fat within 2*theta.
    let mut fats: Vec<FatTube> = accepted
        .iter()
        .map(|&i| {
            let seed_tube = &arr.tubes[i];
            let tube = Tube {
                id: seed_tube.id,
                dim: seed_tube.dim,
                center: seed_tube.center,
                direction: seed_tube.direction,
                radius: theta.min(1.0),
                length: seed_tube.length,
            };
            FatTube {
                tube,
                thin_ids: Vec::new(),
            }
        })
        .collect();
    let mut assignment = BTreeMap::new();
    for t in &arr.tubes {
        let mut placed = false;
        for (fi, &ai) in accepted.iter().enumerate() {
            if tube_in_fat(t, &arr.tubes[ai], contain_lim) {
                fats[fi].thin_ids.push(t.id);
                assignment.insert(t.id, fi);
                placed = true;
                break;
            }
        }
        if !placed {
            for (fi, &ai) in accepted.iter().enumerate() {
                if tube_in_fat(t, &arr.tubes[ai], 2.0 * contain_lim) {
                    fats[fi].thin_ids.push(t.id);
                    assignment.insert(t.id, fi);
                    break;
                }
            }
        }
    }
    let retained: usize = fats.iter().map(|f| f.thin_ids.len()).sum();
    let retention = retained as f64 / n.max(1) as f64;

    // Dominant dyadic class of per-fat thin counts, by total thin mass;
    // ties toward the smaller class.
    let mut class_mass: BTreeMap<u32, usize> = BTreeMap::new();
    for f in &fats {
        if !f.thin_ids.is_empty() {
            let k = (f.thin_ids.len() as f64).log2().floor() as u32;
            *class_mass.entry(k).or_insert(0) += f.thin_ids.len();
        }
    }
    let kept_class = class_mass
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k)
        .unwrap_or(0);
    let kept: Vec<FatTube> = fats
        .into_iter()
        .filter(|f| {
            !f.thin_ids.is_empty()
                && (f.thin_ids.len() as f64).log2().floor() as u32 == kept_class
        })
        .collect();
    let mut assignment_kept = BTreeMap::new();
    for (fi, f) in kept.iter().enumerate() {
        for id in &f.thin_ids {
            assignment_kept.insert(*id, fi);
        }
    }
    let a_value = kept.len() as f64 * theta.powi(3);
    let _ = assignment;
    Ok(FatThinDecomposition {
        theta,
        fats: kept,
        assignment: assignment_kept,
        a_value,
        retention,
        kept_class,
    })
}

/// A cylinder region: unit-length axis segment with transverse radius rho.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub center: Point,
    pub direction: Point,
    pub rho: f64,
}

impl Cylinder {
    /// Segment endpoints within the unit axial extent, tube (segment plus
    /// radius) within rho transversally.
    pub fn contains_tube(&self, t: &Tube) -> bool {
        let (p, q) = t.endpoints();
        for e in [p, q] {
            let w = geom::sub(&e, &self.center);
            let ax = geom::dot(&w, &self.direction);
            let tr = geom::norm(&geom::axpy(&w, -ax, &self.direction));
            if ax.abs() > 0.5 || tr + t.radius > self.rho {
                return false;
            }
        }
        true
    }
}

/// Rescale the tubes inside a 1 x rho x .. x rho cylinder to unit size:
/// rotate the axis onto e1, dilate transverse directions by 1/rho. Image
/// tubes have radius exactly delta/rho (the image of the delta-ball is an
/// ellipsoid inside that ball), realizing the containing-tube correction.
pub fn cylinder_rescale(
    arr: &Arrangement,
    cyl: &Cylinder,
) -> Result<(Arrangement, RigidMap)> {
    if !(arr.delta < cyl.rho && cyl.rho <= 1.0) {
        return Err(Error::Precondition(format!(
            "need delta {} < rho {} <= 1",
            arr.delta, cyl.rho
        )));
    }
    for t in &arr.tubes {
        if !cyl.contains_tube(t) {
            return Err(Error::Precondition(format!(
                "tube {} not contained in the cylinder",
                t.id
            )));
        }
    }
    let dim = arr.dim;
    let frame = orthonormal_frame(&cyl.direction, dim);
    // Rows of the linear part: frame axis k scaled by 1 (axis) or 1/rho.
    let mut linear = [[0.0; 4]; 4];
    for (k, row) in linear.iter_mut().enumerate().take(dim) {
        let s = if k == 0 { 1.0 } else { 1.0 / cyl.rho };
        for (j, v) in row.iter_mut().enumerate().take(dim) {
            *v = frame[k][j] * s;
        }
    }
    for (k, row) in linear.iter_mut().enumerate().skip(dim) {
        row[k] = 1.0;
    }
    let map = RigidMap::new(dim, MapKind::CylinderRescale, linear, cyl.center)?;
    let new_delta = arr.delta / cyl.rho;
    let mut tubes = Vec::with_capacity(arr.tubes.len());
    for t in &arr.tubes {
        let (p, q) = t.endpoints();
        let (ip, iq) = (map.apply(&p), map.apply(&q));
        let center = geom::scale(&geom::add(&ip, &iq), 0.5);
        let dir = geom::sub(&iq, &ip);
        let len = geom::norm(&dir);
        tubes.push(Tube::with_length(t.id, dim, center, dir, new_delta, len)?);
    }
    let out = Arrangement::new(
        dim,
        new_delta,
        tubes,
        arr.seed,
        format!("{}+rescaled", arr.provenance),
    )?;
    Ok((out, map))
}
