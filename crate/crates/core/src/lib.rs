//! Two-stage multi-source domain adaptation: a source-selection stage that
//! scores source transferability by reversing the usual adaptation objective,
//! followed by adversarial adaptation on the re-weighted sources.

// Index loops mirror the formulas; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
