//! Counter-based Gaussian stream.
//!
//! A ChaCha8 keystream is selected by `(seed, path)`; standard normal number
//! `n` is the `n % 2` output of the Box–Muller pair built from 64-bit words
//! `2⌊n/2⌋` and `2⌊n/2⌋ + 1`. Any draw can therefore be regenerated without
//! replaying earlier ones, and paths are independent of scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Generator family; only one is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RngKind {
    #[default]
    Chacha8,
}

impl std::str::FromStr for RngKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chacha8" => Ok(RngKind::Chacha8),
            other => Err(format!("unknown generator '{other}'")),
        }
    }
}

#[derive(Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

#[inline]
fn unit_open(word: u64) -> f64 {
    // (0, 1]: never zero, so the logarithm below is finite.
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl GaussianStream {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        GaussianStream { rng, spare: None }
    }

    fn pair(&mut self) -> (f64, f64) {
        let u1 = unit_open(self.rng.next_u64());
        let u2 = unit_open(self.rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        (r * c, r * s)
    }

    /// Positions the stream so that the next draw is normal number `n`.
    pub fn seek(&mut self, n: u64) {
        // four 32-bit words per pair
        self.rng.set_word_pos(u128::from(n / 2) * 4);
        self.spare = None;
        if n % 2 == 1 {
            let (_, b) = self.pair();
            self.spare = Some(b);
        }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.pair();
        self.spare = Some(b);
        a
    }

    /// Fills `out` with Brownian increments of variance `dt`.
    pub fn fill_increments(&mut self, dt: f64, out: &mut [f64]) {
        let s = dt.sqrt();
        for o in out.iter_mut() {
            *o = s * self.next_normal();
        }
    }
}

/// Brownian increments for one path: `n_steps × n_drivers`, step-major.
pub fn brownian_increments(
    seed: u64,
    path: u64,
    dt: f64,
    n_steps: usize,
    n_drivers: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n_steps * n_drivers];
    GaussianStream::new(seed, path).fill_increments(dt, &mut out);
    out
}

/// Sums consecutive blocks of `factor` steps: the increments of the same
/// Brownian path on a grid `factor` times coarser.
pub fn coarsen_increments(fine: &[f64], n_drivers: usize, factor: usize) -> Vec<f64> {
    assert!(factor >= 1 && n_drivers >= 1);
    let n_fine = fine.len() / n_drivers;
    assert_eq!(n_fine % factor, 0, "fine step count not divisible by factor");
    let n = n_fine / factor;
    let mut out = vec![0.0; n * n_drivers];
    for k in 0..n {
        for j in 0..n_drivers {
            out[k * n_drivers + j] = (0..factor)
                .map(|s| fine[(k * factor + s) * n_drivers + j])
                .sum();
        }
    }
    out
}
