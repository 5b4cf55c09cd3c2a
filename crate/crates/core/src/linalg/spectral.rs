use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::svd::svd;

/// Relative floor on `σ_k / σ_1` below which κ is reported as degenerate.
pub const KAPPA_FLOOR: f64 = 1e-12;

/// Relative gap below which two singular values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Condition number `σ_1 / σ_k` with a degeneracy flag.
///
/// When `σ_k ≤ KAPPA_FLOOR · σ_1` the value is pinned to `1 / KAPPA_FLOOR`
/// rather than dividing by a roundoff-sized singular value, so numerically
/// singular inputs always report the same ceiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa {
    pub value: f64,
    pub degenerate: bool,
}

/// κ from an already computed descending spectrum, using the first `k_rank` values.
pub fn kappa_from_sigma(sigma: &[f64], k_rank: usize) -> Kappa {
    assert!(k_rank >= 1 && k_rank <= sigma.len(), "k_rank out of range");
    let top = sigma[0];
    let bottom = sigma[k_rank - 1];
    if !(bottom > KAPPA_FLOOR * top) {
        return Kappa {
            value: 1.0 / KAPPA_FLOOR,
            degenerate: true,
        };
    }
    Kappa {
        value: top / bottom,
        degenerate: false,
    }
}

pub fn condition_number(m: &Matrix, k_rank: usize) -> Result<Kappa> {
    let r = m.rows().min(m.cols());
    if k_rank == 0 || k_rank > r {
        return Err(Error::InputDomain(format!(
            "k_rank {k_rank} outside 1..={r}"
        )));
    }
    let s = svd(m)?;
    Ok(kappa_from_sigma(&s.sigma, k_rank))
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `Σ p_i log p_i` with `p = softmax(values)`.
pub fn softmax_entropy(values: &[f64]) -> f64 {
    let p = softmax(values);
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum()
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Negative entropy of the softmax of the singular values; lies in `[-log r, 0]`.
pub fn singular_entropy(m: &Matrix) -> Result<f64> {
    let s = svd(m)?;
    Ok(softmax_entropy(&s.sigma))
}

/// Singular values of `m` through the eigenvalues of the smaller Gram matrix.
///
/// `σ_i(W) = sqrt(σ_i(WᵀW))`; for a tall predictor stack this only touches a
/// k×k matrix. Negative roundoff in the Gram spectrum is clamped to zero.
pub fn gram_singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let gram = if m.rows() >= m.cols() {
        m.gram()
    } else {
        m.transpose().gram()
    };
    let s = svd(&gram)?;
    Ok(s.sigma.iter().map(|&l| l.max(0.0).sqrt()).collect())
}

/// `∂σ_i / ∂M = u_i v_iᵀ`.
#[derive(Debug, Clone)]
pub struct SvGradient {
    pub grad: Matrix,
    /// `σ_i` is within [`TIE_TOLERANCE`] of a neighbour; the gradient is then a
    /// subgradient taken from the deterministic SVD basis.
    pub tied: bool,
}

/// Gradient of the `i`-th (0-based, descending) singular value.
pub fn singular_value_gradient(m: &Matrix, i: usize) -> Result<SvGradient> {
    let s = svd(m)?;
    if i >= s.sigma.len() {
        return Err(Error::InputDomain(format!(
            "singular value index {i} outside 0..{}",
            s.sigma.len()
        )));
    }
    let tied = is_tied(&s.sigma, i);
    let grad = Matrix::outer(&s.left(i), &s.right(i));
    Ok(SvGradient { grad, tied })
}

pub(crate) fn is_tied(sigma: &[f64], i: usize) -> bool {
    let scale = sigma[0].max(f64::MIN_POSITIVE);
    let close = |j: usize| (sigma[i] - sigma[j]).abs() <= TIE_TOLERANCE * scale;
    (i > 0 && close(i - 1)) || (i + 1 < sigma.len() && close(i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_perfectly_conditioned() {
        for k in 1..5 {
            let kap = condition_number(&Matrix::identity(k), k).unwrap();
            assert_eq!(kap.value, 1.0);
            assert!(!kap.degenerate);
        }
    }

    #[test]
    fn optimal_predictors_kappa_is_inverse_epsilon() {
        let eps = 0.02;
        let w = Matrix::from_rows(&[[1.0, eps], [1.0, -eps]]);
        let kap = condition_number(&w, 2).unwrap();
        assert!((kap.value - 50.0).abs() < 1e-12, "{}", kap.value);
    }

    #[test]
    fn constrained_predictors_match_closed_form() {
        let eps: f64 = 0.02;
        let w = Matrix::from_rows(&[[0.0, 1.0], [1.0, -eps]]);
        let root = (eps * eps + 4.0).sqrt();
        let closed = ((2.0 + eps * eps + eps * root) / (2.0 + eps * eps - eps * root)).sqrt();
        let kap = condition_number(&w, 2).unwrap();
        assert!((kap.value - closed).abs() < 1e-13);
        // High-precision evaluation of the closed form at eps = 0.02.
        assert!((kap.value - 1.020_200_999_975_001_2).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        let kap = condition_number(&m, 2).unwrap();
        assert!(kap.degenerate);
        assert_eq!(kap.value, 1.0 / KAPPA_FLOOR);
        let z = condition_number(&Matrix::zeros(2, 2), 2).unwrap();
        assert!(z.degenerate);
    }

    #[test]
    fn k_rank_is_validated() {
        assert!(condition_number(&Matrix::identity(2), 3).is_err());
        assert!(condition_number(&Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn frobenius_trivial_values() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 4)), 0.0);
        assert_eq!(frobenius_norm(&Matrix::identity(4)), 2.0);
    }

    #[test]
    fn entropy_of_uniform_spectrum() {
        let h = singular_entropy(&Matrix::identity(3)).unwrap();
        assert!((h + 3f64.ln()).abs() < 1e-15);
        let h = singular_entropy(&Matrix::identity(3).scale(7.5)).unwrap();
        assert!((h + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn entropy_of_spread_spectrum() {
        // Direct evaluation for sigma = (10, 0): p = (1, e^-10) / (1 + e^-10).
        let h = singular_entropy(&Matrix::from_diag(&[10.0, 0.0])).unwrap();
        let z = 1.0 + (-10f64).exp();
        let (p1, p2) = (1.0 / z, (-10f64).exp() / z);
        let expected = p1 * p1.ln() + p2 * p2.ln();
        assert!((h - expected).abs() < 1e-15);
        // -(1 + 10) e^-10 to leading order.
        assert!((h + 11.0 * (-10f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn diagonal_singular_value_gradients() {
        let m = Matrix::from_diag(&[3.0, 1.0]);
        let g0 = singular_value_gradient(&m, 0).unwrap();
        assert_eq!(g0.grad, Matrix::from_diag(&[1.0, 0.0]));
        assert!(!g0.tied);
        let g1 = singular_value_gradient(&m, 1).unwrap();
        assert_eq!(g1.grad, Matrix::from_diag(&[0.0, 1.0]));
    }

    #[test]
    fn ties_are_flagged() {
        let g = singular_value_gradient(&Matrix::identity(3), 1).unwrap();
        assert!(g.tied);
        assert!((super::frobenius_norm(&g.grad) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_route_matches_direct_route() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.25], [2.0, 2.0]]);
        let direct = svd(&m).unwrap().sigma;
        let gram = gram_singular_values(&m).unwrap();
        for (a, b) in direct.iter().zip(&gram) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
