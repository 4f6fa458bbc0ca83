use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Mode;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Additive `N(0, v)` feature noise, active in train mode only.
#[derive(Clone, Debug)]
pub struct GaussianNoiseLayer {
    variance: f64,
    rng: ChaCha8Rng,
}

impl GaussianNoiseLayer {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidConfig(format!("noise variance must be finite and >= 0, got {variance}")));
        }
        Ok(GaussianNoiseLayer { variance, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Draws a noise tensor of `shape`; advances the stream.
    pub fn sample(&mut self, shape: &[usize]) -> Tensor {
        let std = self.variance.sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = normal.sample(&mut self.rng);
        }
        t
    }

    /// The noise enters the tape as a constant, so gradients pass through unchanged.
    pub fn forward(&mut self, tape: &mut Tape, z: Var, mode: Mode) -> Result<Var> {
        if mode == Mode::Eval || self.variance == 0.0 {
            return Ok(z);
        }
        let shape = tape.value(z).shape().to_vec();
        let delta = tape.constant(self.sample(&shape));
        tape.add(z, delta)
    }
}
