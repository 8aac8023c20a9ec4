//! Scalar math shims and the seeded Gaussian source.
//!
//! The crate is `no_std`, so float transcendentals go through `libm`. Routing
//! everything through one module also keeps results identical between test
//! and release builds.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use libm::{cos, exp, fabs, floor, log as ln, sin, sqrt};

pub const TAU: f64 = 2.0 * core::f64::consts::PI;

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Squared Euclidean distance between RGB triples.
pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// log(Σ exp(x_i)) with max-subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite() {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += exp(x - m);
    }
    m + ln(s)
}

/// Deterministic standard-normal stream (ChaCha8 + Box-Muller).
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform draw in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11; // 53 random bits
        (bits as f64 + 1.0) * (1.0 / 9007199254740992.0)
    }

    /// Uniform draw from 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.rng.next_u64() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = sqrt(-2.0 * ln(u1));
        let theta = TAU * u2;
        self.spare = Some(r * sin(theta));
        r * cos(theta)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}

/// Seed-reproducible choice of `k` distinct indices out of `n`, ascending.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> alloc::vec::Vec<usize> {
    use alloc::vec::Vec;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut src = GaussianSource::new(seed);
    let k = k.min(n);
    // Partial Fisher-Yates: the first k slots become the sample.
    for i in 0..k {
        let j = i + src.below(n - i);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..k].into();
    chosen.sort_unstable();
    chosen
}
