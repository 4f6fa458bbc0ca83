use super::Mode;
use crate::autograd::{column_moments, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-feature batch normalisation with running statistics for eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormVars {
    pub gamma: Var,
    pub beta: Var,
}

impl BatchNormLayer {
    pub fn new(features: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::ones(&[features]),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::ones(&[features]),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.numel()
    }

    pub fn bind(&self, tape: &mut Tape) -> BatchNormVars {
        BatchNormVars { gamma: tape.leaf(self.gamma.clone()), beta: tape.leaf(self.beta.clone()) }
    }

    /// Train mode normalises with the batch statistics and folds them into the
    /// running estimates; eval mode reads the running estimates only.
    pub fn forward(&mut self, tape: &mut Tape, vars: &BatchNormVars, x: Var, mode: Mode) -> Result<Var> {
        let value = tape.value(x);
        if value.shape().len() != 2 || value.cols() != self.features() {
            return Err(Error::shape("batch_norm", value.shape(), self.gamma.shape()));
        }
        match mode {
            Mode::Train => {
                if value.rows() < 2 {
                    return Err(Error::InvalidInput("train-mode batch norm needs a batch of at least 2".into()));
                }
                let (mean, var) = column_moments(value);
                let out = tape.batch_norm(x, vars.gamma, vars.beta, self.eps)?;
                let m = self.momentum;
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * b;
                }
                Ok(out)
            }
            Mode::Eval => {
                // y = x * a + c with a = gamma / sqrt(var + eps), c = beta - mean * a
                let n = self.features();
                let mut diag = Tensor::zeros(&[n, n]);
                let mut shift = vec![0.0; n];
                for j in 0..n {
                    let a = self.gamma.data()[j] / (self.running_var.data()[j] + self.eps).sqrt();
                    diag.data_mut()[j * n + j] = a;
                    shift[j] = self.beta.data()[j] - self.running_mean.data()[j] * a;
                }
                let d = tape.constant(diag);
                let c = tape.constant(Tensor::vector(shift));
                let scaled = tape.matmul(x, d)?;
                tape.add_row_broadcast(scaled, c)
            }
        }
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}
