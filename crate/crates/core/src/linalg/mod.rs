//! Dense real matrices, singular value decomposition, and the spectral
//! scalars built on it (condition number, Frobenius norm, singular-value
//! entropy and singular-value subgradients).
//!
//! Everything here is a pure function of its inputs. The SVD is a one-sided
//! cyclic Jacobi iteration run on whichever side gives the smaller Gram
//! matrix, which is accurate and simple at the sizes this crate works with.

mod matrix;
mod solve;
mod spectral;
mod svd;

pub use matrix::Matrix;
pub use solve::{cholesky, cholesky_solve, least_squares, Cholesky};
pub use spectral::{
    condition_number, frobenius_norm, gram_singular_values, kappa_from_sigma, singular_entropy,
    singular_value_gradient, softmax, softmax_entropy, Kappa, SvGradient, KAPPA_FLOOR,
    TIE_TOLERANCE,
};
pub use svd::{svd, SvdResult};

/// Formats a value with 17 significant digits, the round-trip precision of an `f64`.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}
