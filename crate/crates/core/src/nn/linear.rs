use rand::Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected layer computing `x W^T + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.numel() != weight.rows() {
            return Err(Error::shape("linear", weight.shape(), bias.shape()));
        }
        Ok(LinearLayer { weight, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output).map(|_| rng.random_range(-limit..=limit)).collect();
        LinearLayer {
            weight: Tensor::new(vec![output, input], data).expect("glorot shape"),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearVars {
        LinearVars { weight: tape.leaf(self.weight.clone()), bias: tape.leaf(self.bias.clone()) }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &LinearVars, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape("linear", &shape, self.weight.shape()));
        }
        let wt = tape.transpose(vars.weight)?;
        let xw = tape.matmul(x, wt)?;
        tape.add_row_broadcast(xw, vars.bias)
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
