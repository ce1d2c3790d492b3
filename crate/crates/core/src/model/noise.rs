use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// How Brownian increments are shared across species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// One independent Brownian motion per species.
    #[default]
    Independent,
    /// All species are driven by the same scalar Brownian path.
    Common,
}

/// Brownian increments `dW^m` for one sample path, `steps x d`, row-major.
///
/// Generated from a ChaCha8 stream seeded with `seed`; each increment is
/// `sqrt(h) * N(0, 1)`. With [`NoiseKind::Common`] one normal is drawn per
/// step and copied to every species.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub increments: Vec<f64>,
    pub steps: usize,
    pub d: usize,
    pub seed: u64,
}

impl NoisePath {
    pub fn generate(seed: u64, steps: usize, d: usize, h: f64, kind: NoiseKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sqrt_h = h.sqrt();
        let mut increments = Vec::with_capacity(steps * d);
        for _ in 0..steps {
            match kind {
                NoiseKind::Independent => {
                    for _ in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        increments.push(sqrt_h * z);
                    }
                }
                NoiseKind::Common => {
                    let z: f64 = rng.sample(StandardNormal);
                    increments.extend(std::iter::repeat_n(sqrt_h * z, d));
                }
            }
        }
        Self {
            increments,
            steps,
            d,
            seed,
        }
    }

    pub fn zeros(steps: usize, d: usize) -> Self {
        Self {
            increments: vec![0.0; steps * d],
            steps,
            d,
            seed: 0,
        }
    }

    pub fn from_increments(increments: Vec<f64>, steps: usize, d: usize) -> Result<Self> {
        if increments.len() != steps * d {
            return Err(Error::DimensionMismatch {
                expected: steps * d,
                got: increments.len(),
            });
        }
        Ok(Self {
            increments,
            steps,
            d,
            seed: 0,
        })
    }

    pub fn step(&self, m: usize) -> &[f64] {
        &self.increments[m * self.d..(m + 1) * self.d]
    }

    /// Sums consecutive blocks of `factor` increments: the same Brownian
    /// path observed on a mesh `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = vec![0.0; steps * self.d];
        for m in 0..self.steps {
            let row = &mut increments[(m / factor) * self.d..(m / factor + 1) * self.d];
            for (acc, dw) in row.iter_mut().zip(self.step(m)) {
                *acc += dw;
            }
        }
        Ok(Self {
            increments,
            steps,
            d: self.d,
            seed: self.seed,
        })
    }
}

/// Per-sample seeds derived from one base seed.
///
/// Sample `k` takes the first output of the ChaCha8 generator seeded with
/// `base` on stream `k`, so the seed of a sample depends only on
/// `(base, k)` and batches can be evaluated in any order.
pub fn sample_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(base);
            rng.set_stream(k);
            rng.next_u64()
        })
        .collect()
}
