//! Trainable layers and the momentum-SGD optimizer.

mod batchnorm;
mod linear;
mod noise;
mod sgd;
mod slr;

pub use batchnorm::{BatchNormLayer, BatchNormVars};
pub use linear::{LinearLayer, LinearVars};
pub use noise::GaussianNoiseLayer;
pub use sgd::SgdOptimizer;
pub use slr::{sphere_project, sphere_project_tensor, SlrHead, SlrVars, SPHERE_TOLERANCE};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
