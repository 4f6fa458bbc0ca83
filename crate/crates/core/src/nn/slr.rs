use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Inputs to [`SlrHead::forward`] must lie this close to the sphere.
pub const SPHERE_TOLERANCE: f64 = 1e-6;

/// Rescales every row of `z` onto the radius-`r` sphere.
pub fn sphere_project(tape: &mut Tape, z: Var, radius: f64) -> Result<Var> {
    tape.row_normalize(z, radius)
}

/// Tape-free variant of [`sphere_project`].
pub fn sphere_project_tensor(z: &Tensor, radius: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let out = tape.row_normalize(v, radius)?;
    Ok(tape.value(out).clone())
}

/// Spherical logistic regression: a softmax over `omega_k . z + b_k` with
/// unit-norm class directions `omega_k` and features on a sphere of radius `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlrHead {
    pub omega: Tensor,
    pub bias: Tensor,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SlrVars {
    pub omega: Var,
    pub bias: Var,
}

impl SlrHead {
    pub fn new(omega: Tensor, bias: Tensor, radius: f64) -> Result<Self> {
        if omega.shape().len() != 2 || bias.numel() != omega.rows() {
            return Err(Error::shape("slr", omega.shape(), bias.shape()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig(format!("sphere radius must be positive, got {radius}")));
        }
        let mut head = SlrHead { omega, bias, radius };
        head.renormalize()?;
        Ok(head)
    }

    /// Gaussian class directions normalised to unit length, zero bias.
    pub fn random<R: Rng + ?Sized>(classes: usize, dim: usize, radius: f64, rng: &mut R) -> Result<Self> {
        let data = (0..classes * dim).map(|_| rng.sample(StandardNormal)).collect();
        Self::new(Tensor::new(vec![classes, dim], data)?, Tensor::zeros(&[classes]), radius)
    }

    pub fn classes(&self) -> usize {
        self.omega.rows()
    }

    pub fn dim(&self) -> usize {
        self.omega.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> SlrVars {
        SlrVars { omega: tape.leaf(self.omega.clone()), bias: tape.leaf(self.bias.clone()) }
    }

    /// Binds the parameters as constants, for a frozen head.
    pub fn bind_frozen(&self, tape: &mut Tape) -> SlrVars {
        SlrVars { omega: tape.constant(self.omega.clone()), bias: tape.constant(self.bias.clone()) }
    }

    /// Class probabilities `[batch × K]`.
    pub fn forward(&self, tape: &mut Tape, vars: &SlrVars, z: Var) -> Result<Var> {
        let value = tape.value(z);
        if value.shape().len() != 2 || value.cols() != self.dim() {
            return Err(Error::shape("slr", value.shape(), self.omega.shape()));
        }
        for i in 0..value.rows() {
            let norm = value.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - self.radius).abs() > SPHERE_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "slr input row {i} has norm {norm}, expected {}",
                    self.radius
                )));
            }
        }
        let wt = tape.transpose(vars.omega)?;
        let logits = tape.matmul(z, wt)?;
        let logits = tape.add_row_broadcast(logits, vars.bias)?;
        tape.row_softmax(logits)
    }

    /// Tape-free forward pass.
    pub fn predict(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let p = self.forward(&mut tape, &vars, zv)?;
        Ok(tape.value(p).clone())
    }

    /// Projects every class direction back to unit norm.
    pub fn renormalize(&mut self) -> Result<()> {
        let n = self.dim();
        for (k, row) in self.omega.data_mut().chunks_mut(n).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { row: k });
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.omega, &mut self.bias]
    }
}
