//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.

mod gradcheck;
mod graph;
mod matrix;
mod opcheck;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{pairwise_distances, Graph, Var};
pub use matrix::Matrix;
pub use opcheck::{op_gradient_checks, OpCheck};

/// Stabilizer added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;
