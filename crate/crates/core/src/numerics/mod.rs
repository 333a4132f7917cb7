//! Dense linear algebra, activations, same-padded 1D convolution, symmetric
//! matrix functions and the finite-difference gradient harness.

mod activation;
mod conv;
pub mod gradcheck;
mod linalg;
mod matrix;

pub use activation::{pi_tanh, pi_tanh_matrix, relu, relu_matrix};
pub(crate) use conv::{col2im, im2col};
pub use conv::{conv1d, conv1d_backward, ConvGrads, ConvKernel};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradReport, ParamGroup};
pub use linalg::{det3, sym_apply, sym_eigen, sym_inv_sqrt, sym_sqrt, SymEigen};
pub(crate) use matrix::require;
pub use matrix::{softmax_rows, Matrix};
