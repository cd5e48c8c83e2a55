//! Geometric primitives: tubes, angles, wedges, central projection, and the
//! affine maps used for cylinder rescaling.
//!
//! Points are stored as `[f64; 4]` with coordinates at or beyond the ambient
//! dimension fixed to zero. Everything is clipped to the ball B(0,2).

use crate::error::{Error, Result};
use crate::rng::Rng;
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

pub type Point = [f64; 4];

/// Radius of the ambient ball all objects must live in.
pub const DOMAIN_RADIUS: f64 = 2.0;
/// Tolerance for unit-vector checks.
pub const UNIT_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

#[inline]
pub fn norm2(a: &Point) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

#[inline]
pub fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

#[inline]
pub fn axpy(a: &Point, t: f64, d: &Point) -> Point {
    [
        a[0] + t * d[0],
        a[1] + t * d[1],
        a[2] + t * d[2],
        a[3] + t * d[3],
    ]
}

pub fn normalize(a: &Point) -> Option<Point> {
    let n = norm(a);
    if n < UNIT_TOL {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

/// Angle between the *lines* spanned by two unit vectors, in [0, pi/2].
/// Antipodal directions are identified, so this is the right notion of
/// "same direction" for tubes.
pub fn line_angle(u: &Point, v: &Point) -> f64 {
    dot(u, v).abs().min(1.0).acos()
}

/// Volume of the unit ball in `R^dim`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        4 => std::f64::consts::PI * std::f64::consts::PI / 2.0,
        _ => panic!("dimension {dim} unsupported"),
    }
}

/// Squared distance from `p` to the segment with midpoint `c`, unit
/// direction `d` and half-length `hl`.
#[inline]
pub fn dist2_point_segment(p: &Point, c: &Point, d: &Point, hl: f64) -> f64 {
    let w = sub(p, c);
    let t = dot(&w, d).clamp(-hl, hl);
    let q = axpy(&w, -t, d);
    norm2(&q)
}

/// Distance between two segments given by (midpoint, unit direction,
/// half-length). Exact for the pairs we care about; used for essential
/// distinctness and fat-tube bookkeeping.
pub fn segment_distance(c1: &Point, d1: &Point, hl1: f64, c2: &Point, d2: &Point, hl2: f64) -> f64 {
    // Clamped closest-point iteration on the two parameters; converges in a
    // few sweeps because the objective is quadratic and the box is a product
    // of intervals.
    let mut s = 0.0;
    let mut t = 0.0;
    for _ in 0..8 {
        let p2 = axpy(c2, t, d2);
        let w = sub(&p2, c1);
        s = dot(&w, d1).clamp(-hl1, hl1);
        let p1 = axpy(c1, s, d1);
        let w2 = sub(&p1, c2);
        t = dot(&w2, d2).clamp(-hl2, hl2);
    }
    let p1 = axpy(c1, s, d1);
    let p2 = axpy(c2, t, d2);
    norm(&sub(&p1, &p2))
}

/// A delta-tube: the `radius`-neighborhood of a line segment, clipped to
/// B(0,2). Generators always produce unit length; clipping or rescaling can
/// shorten or lengthen it, and `length` records the actual value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tube {
    pub id: u32,
    pub dim: usize,
    pub center: Point,
    pub direction: Point,
    pub radius: f64,
    pub length: f64,
}

impl Tube {
    /// Build a tube of nominal unit length and clip it to B(0,2).
    pub fn new(id: u32, dim: usize, center: Point, direction: Point, radius: f64) -> Result<Tube> {
        Tube::with_length(id, dim, center, direction, radius, 1.0)
    }

    pub fn with_length(
        id: u32,
        dim: usize,
        center: Point,
        direction: Point,
        radius: f64,
        length: f64,
    ) -> Result<Tube> {
        if !(2..=4).contains(&dim) {
            return Err(Error::Domain(format!("dimension {dim} not in 2..=4")));
        }
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(Error::Domain(format!("radius {radius} not in (0, 1]")));
        }
        for k in dim..4 {
            if center[k] != 0.0 || direction[k] != 0.0 {
                return Err(Error::Domain("coordinates beyond dim must be zero".into()));
            }
        }
        let mut d = normalize(&direction)
            .ok_or_else(|| Error::Domain("direction must be a nonzero vector".into()))?;
        // Canonical sign: first coordinate of magnitude above tolerance is
        // positive, so antipodal representatives collapse to one.
        for k in 0..dim {
            if d[k].abs() > UNIT_TOL {
                if d[k] < 0.0 {
                    d = scale(&d, -1.0);
                }
                break;
            }
        }
        // Clip the segment so segment + radius-ball stays inside B(0,2):
        // solve |center + t d| = DOMAIN_RADIUS - radius for t.
        let r_in = DOMAIN_RADIUS - radius;
        let cd = dot(&center, &d);
        let disc = cd * cd - norm2(&center) + r_in * r_in;
        if disc <= 0.0 {
            return Err(Error::Domain("tube lies outside B(0,2)".into()));
        }
        let half = length / 2.0;
        let t_lo = (-cd - disc.sqrt()).max(-half);
        let t_hi = (-cd + disc.sqrt()).min(half);
        if t_hi - t_lo <= 0.0 {
            return Err(Error::Domain("tube lies outside B(0,2)".into()));
        }
        let mid = (t_lo + t_hi) / 2.0;
        Ok(Tube {
            id,
            dim,
            center: axpy(&center, mid, &d),
            direction: d,
            radius,
            length: t_hi - t_lo,
        })
    }

    pub fn half_length(&self) -> f64 {
        self.length / 2.0
    }

    pub fn endpoints(&self) -> (Point, Point) {
        let h = self.half_length();
        (
            axpy(&self.center, -h, &self.direction),
            axpy(&self.center, h, &self.direction),
        )
    }

    /// Exact Lebesgue volume: cylinder plus two spherical caps.
    pub fn analytic_volume(&self) -> f64 {
        let d = self.dim;
        self.length * unit_ball_volume(d - 1) * self.radius.powi(d as i32 - 1)
            + unit_ball_volume(d) * self.radius.powi(d as i32)
    }

    pub fn dist2_to_segment(&self, p: &Point) -> f64 {
        dist2_point_segment(p, &self.center, &self.direction, self.half_length())
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.dist2_to_segment(p) <= self.radius * self.radius
    }

    /// Clipping can shorten tubes near the boundary; short stubs are kept out
    /// of axiom statistics.
    pub fn axiom_eligible(&self) -> bool {
        self.length >= 0.5
    }

    fn check_unit(v: &Point, what: &str) -> Result<()> {
        if (norm2(v) - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("{what} must be a unit vector")));
        }
        Ok(())
    }
}

/// |v1 ^ v2 ^ v3| for unit vectors in R^4, computed via Cauchy-Binet over
/// coordinate 3x3 minors. Zero iff the triple is linearly dependent.
pub fn wedge3(v1: &Point, v2: &Point, v3: &Point) -> Result<f64> {
    Tube::check_unit(v1, "v1")?;
    Tube::check_unit(v2, "v2")?;
    Tube::check_unit(v3, "v3")?;
    let cols = [v1, v2, v3];
    let mut sum = 0.0;
    for a in 0..4 {
        for b in (a + 1)..4 {
            for c in (b + 1)..4 {
                let m = det3(
                    cols[0][a], cols[1][a], cols[2][a], cols[0][b], cols[1][b], cols[2][b],
                    cols[0][c], cols[1][c], cols[2][c],
                );
                sum += m * m;
            }
        }
    }
    Ok(sum.sqrt().min(1.0))
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn det3(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64, g: f64, h: f64, i: f64) -> f64 {
    a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
}

/// A line in R^4 given by a point and a unit direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub point: Point,
    pub direction: Point,
}

impl Line {
    pub fn new(point: Point, direction: Point) -> Result<Line> {
        let direction = normalize(&direction)
            .ok_or_else(|| Error::Domain("line direction must be nonzero".into()))?;
        Ok(Line { point, direction })
    }

    pub fn dist(&self, p: &Point) -> f64 {
        let w = sub(p, &self.point);
        let t = dot(&w, &self.direction);
        norm(&axpy(&w, -t, &self.direction))
    }
}

/// A 2-plane in R^4 spanned by two orthonormal vectors through `point`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Plane2 {
    pub point: Point,
    pub u: Point,
    pub v: Point,
}

impl Plane2 {
    pub fn new(point: Point, u: Point, v: Point) -> Result<Plane2> {
        let u = normalize(&u).ok_or_else(|| Error::Domain("plane spanner u is zero".into()))?;
        let v_perp = axpy(&v, -dot(&v, &u), &u);
        let v = normalize(&v_perp)
            .ok_or_else(|| Error::Domain("plane spanners are collinear".into()))?;
        Ok(Plane2 { point, u, v })
    }

    pub fn project_onto_span(&self, w: &Point) -> Point {
        axpy(&scale(&self.u, dot(w, &self.u)), dot(w, &self.v), &self.v)
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        let w = sub(p, &self.point);
        let proj = self.project_onto_span(&w);
        norm(&sub(&w, &proj)) <= tol
    }

    /// sin of the angle between a direction and the plane.
    pub fn direction_sin(&self, d: &Point) -> f64 {
        let proj = self.project_onto_span(d);
        norm(&sub(d, &proj)).min(1.0)
    }

    pub fn direction_angle(&self, d: &Point) -> f64 {
        self.direction_sin(d).asin()
    }
}

/// Central projection onto `target`: the image of `x` is the unique
/// intersection of `target` with the 2-plane spanned by `x` and `axis`.
/// Points already on the target plane are fixed.
pub fn central_projection(x: &Point, axis: &Line, target: &Plane2) -> Result<Point> {
    if axis.dist(x) < 1e-9 {
        return Err(Error::Singular("point lies on the projection axis".into()));
    }
    // a + s*u + t*(x - a) = p + alpha*e + beta*f
    let xa = sub(x, &axis.point);
    let rhs = sub(&target.point, &axis.point);
    let m = Matrix4::from_columns(&[
        Vector4::from_row_slice(&axis.direction),
        Vector4::from_row_slice(&xa),
        Vector4::from_row_slice(&scale(&target.u, -1.0)),
        Vector4::from_row_slice(&scale(&target.v, -1.0)),
    ]);
    let lu = m.lu();
    let sol = lu
        .solve(&Vector4::from_row_slice(&rhs))
        .ok_or_else(|| Error::Domain("degenerate projection configuration".into()))?;
    let alpha = sol[2];
    let beta = sol[3];
    Ok(axpy(
        &axpy(&target.point, alpha, &target.u),
        beta,
        &target.v,
    ))
}

/// Sampled Lipschitz estimate for the central projection restricted to
/// B(0,2) minus the r-neighborhood of the axis.
pub fn projection_lipschitz(axis: &Line, target: &Plane2, r: f64, samples: u32, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < samples {
        let x = rng.point_in_ball(4, DOMAIN_RADIUS);
        if axis.dist(&x) < r {
            continue;
        }
        let h = rng.unit_vector(4);
        let y = axpy(&x, eps, &h);
        if axis.dist(&y) < r {
            continue;
        }
        let (px, py) = match (
            central_projection(&x, axis, target),
            central_projection(&y, axis, target),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => continue,
        };
        worst = worst.max(norm(&sub(&py, &px)) / eps);
        done += 1;
    }
    worst
}

/// Deterministic orthonormal frame with `u` as the first column
/// (Householder reflection of the standard basis).
pub fn orthonormal_frame(u: &Point, dim: usize) -> [Point; 4] {
    let mut frame = [[0.0; 4]; 4];
    let mut e1 = [0.0; 4];
    e1[0] = 1.0;
    let w = sub(&e1, u);
    let wn2 = norm2(&w);
    for (k, col) in frame.iter_mut().enumerate().take(dim) {
        let mut ek = [0.0; 4];
        ek[k] = 1.0;
        *col = if wn2 < 1e-24 {
            ek
        } else {
            axpy(&ek, -2.0 * dot(&ek, &w) / wn2, &w)
        };
    }
    for (k, col) in frame.iter_mut().enumerate().skip(dim) {
        let mut ek = [0.0; 4];
        ek[k] = 1.0;
        *col = ek;
    }
    frame
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    CylinderRescale,
    AnisotropicDilation,
    BallRescale,
}

/// Invertible affine map `x -> L(x - shift)`. The determinant is recorded so
/// measures can be transported exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidMap {
    pub dim: usize,
    pub kind: MapKind,
    linear: [[f64; 4]; 4],
    shift: Point,
    det: f64,
}

impl RigidMap {
    pub fn new(dim: usize, kind: MapKind, linear: [[f64; 4]; 4], shift: Point) -> Result<RigidMap> {
        let m = Matrix4::from_fn(|r, c| linear[r][c]);
        let det = m.determinant();
        if det.abs() < 1e-14 {
            return Err(Error::Domain("map linear part is singular".into()));
        }
        Ok(RigidMap {
            dim,
            kind,
            linear,
            shift,
            det,
        })
    }

    pub fn determinant(&self) -> f64 {
        self.det
    }

    pub fn apply(&self, p: &Point) -> Point {
        let w = sub(p, &self.shift);
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.linear[r], &w);
        }
        out
    }

    /// Transport a measure through the map.
    pub fn push_measure(&self, m: f64) -> f64 {
        m * self.det.abs()
    }

    pub fn inverse(&self) -> RigidMap {
        let m = Matrix4::from_fn(|r, c| self.linear[r][c]);
        let inv = m.try_inverse().expect("constructor checked invertibility");
        let mut linear = [[0.0; 4]; 4];
        for (r, row) in linear.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = inv[(r, c)];
            }
        }
        // inverse of x -> L(x - s) is y -> L^{-1} y + s, expressed in the
        // same x -> L'(x - s') form with s' = -L s ... easier: keep shift on
        // the output side by composing with translation baked into `shift`.
        let shift = {
            // f(x) = L(x - s); f^{-1}(y) = L^{-1} y + s = L^{-1}(y - (-L s))
            let mut ls = [0.0; 4];
            for (r, v) in ls.iter_mut().enumerate() {
                *v = dot(&self.linear[r], &self.shift);
            }
            scale(&ls, -1.0)
        };
        RigidMap {
            dim: self.dim,
            kind: self.kind,
            linear,
            shift,
            det: 1.0 / self.det,
        }
    }
}
