//! Dense tensors and a define-by-run reverse-mode tape.

pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    all_probes, compare_gradients, finite_difference_check, numeric_gradient, GradCheckConfig, GradCheckReport,
    NumericGradient, Probe,
};
pub(crate) use tape::column_moments;
pub use tape::{Gradients, GrlConfig, Primitive, Tape, Var};
pub use tensor::Tensor;
