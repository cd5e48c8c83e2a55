//! Seeded randomness and low-discrepancy sequences.
//!
//! All stochastic code in the crate draws from [`Rng`] so that results are a
//! pure function of the seed. Distribution transforms (uniform, gaussian,
//! sphere, ball) are implemented here rather than taken from a distributions
//! crate, so byte-level reproducibility does not depend on upstream internals.

use crate::geom::Point;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub struct Rng {
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream; `label` keeps sub-streams stable under
    /// code reordering.
    pub fn fork(&self, label: u64) -> Self {
        let mut s = self.inner.get_seed();
        for (i, b) in label.to_le_bytes().iter().enumerate() {
            s[16 + i] ^= b;
        }
        s[24] ^= 0xa5;
        Rng {
            inner: ChaCha12Rng::from_seed(s),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        // Modulo bias is irrelevant at our sizes (n << 2^64).
        (self.inner.next_u64() % n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Standard normal via Marsaglia's polar method.
    pub fn gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.unit() - 1.0;
            let v = 2.0 * self.unit() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// Uniform direction on the unit sphere of `R^dim`.
    pub fn unit_vector(&mut self, dim: usize) -> Point {
        loop {
            let mut v = [0.0; 4];
            let mut n2 = 0.0;
            for x in v.iter_mut().take(dim) {
                *x = self.gaussian();
                n2 += *x * *x;
            }
            if n2 > 1e-12 {
                let inv = 1.0 / n2.sqrt();
                for x in v.iter_mut().take(dim) {
                    *x *= inv;
                }
                return v;
            }
        }
    }

    /// Uniform point in the ball of radius `r` centered at the origin.
    pub fn point_in_ball(&mut self, dim: usize, r: f64) -> Point {
        loop {
            let mut p = [0.0; 4];
            let mut n2 = 0.0;
            for x in p.iter_mut().take(dim) {
                *x = self.range(-1.0, 1.0);
                n2 += *x * *x;
            }
            if n2 <= 1.0 {
                for x in p.iter_mut().take(dim) {
                    *x *= r;
                }
                return p;
            }
        }
    }
}

const HALTON_BASES: [u64; 4] = [2, 3, 5, 7];

/// Van der Corput radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let bf = b as f64;
    while i > 0 {
        f /= bf;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Halton point `i` in [0,1)^dim with a seeded Cranley-Patterson rotation.
pub fn halton_point(i: u64, dim: usize, shift: &[f64; 4]) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (k, x) in p.iter_mut().enumerate().take(dim) {
        let v = radical_inverse(i + 1, HALTON_BASES[k]) + shift[k];
        *x = v - v.floor();
    }
    p
}

/// Seeded rotation vector for [`halton_point`].
pub fn halton_shift(seed: u64) -> [f64; 4] {
    let mut rng = Rng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut s = [0.0; 4];
    for x in s.iter_mut() {
        *x = rng.unit();
    }
    s
}

/// Compensated (Kahan) accumulator; summation order is fixed by callers.
#[derive(Debug, Default, Clone, Copy)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_streams() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn fork_decorrelates() {
        let base = Rng::new(7);
        let mut a = base.fork(1);
        let mut b = base.fork(2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn unit_vector_is_unit() {
        let mut rng = Rng::new(3);
        for dim in 2..=4 {
            let v = rng.unit_vector(dim);
            let n2: f64 = v.iter().map(|x| x * x).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
            for x in v.iter().skip(dim) {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn halton_covers_unit_cube() {
        let shift = halton_shift(11);
        let mut mean = [0.0; 4];
        let n = 4096;
        for i in 0..n {
            let p = halton_point(i, 4, &shift);
            for k in 0..4 {
                mean[k] += p[k];
            }
        }
        for m in mean {
            assert!((m / n as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn kahan_beats_naive_on_adversarial_sum() {
        let mut k = Kahan::default();
        k.add(1e16);
        for _ in 0..10_000 {
            k.add(1.0);
        }
        k.add(-1e16);
        assert_eq!(k.value(), 10_000.0);
    }
}
