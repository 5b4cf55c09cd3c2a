//! Spectral penalties on a stack of linear predictors, with exact gradients.

use crate::error::{Error, Result};
use crate::linalg::{softmax_entropy, svd, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_entropy: f64,
    /// Absolute floor on `σ_k` inside the κ term.
    pub sigma_floor: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_entropy: 0.0,
            sigma_floor: 1e-8,
        }
    }
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda_entropy: 0.0,
            sigma_floor: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_entropy", self.lambda_entropy),
            ("sigma_floor", self.sigma_floor),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.lambda1 != 0.0 || self.lambda2 != 0.0 || self.lambda_entropy != 0.0
    }
}

/// Penalty value and its gradient with respect to the predictor matrix.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub grad: Matrix,
    /// `σ_k` fell under the floor; the κ gradient was zeroed.
    pub degenerate: bool,
}

impl Penalty {
    fn zero(w: &Matrix) -> Self {
        Self {
            value: 0.0,
            grad: Matrix::zeros(w.rows(), w.cols()),
            degenerate: false,
        }
    }
}

/// `λ₁ σ₁/max(σ_k, floor) + λ₂ ‖W‖²_F` with `k = min(rows, cols)`.
pub fn spectral_penalty(w: &Matrix, cfg: &PenaltyConfig) -> Result<Penalty> {
    if !w.is_finite() {
        return Err(Error::InputDomain("non-finite predictor matrix".into()));
    }
    let mut out = Penalty::zero(w);
    if cfg.lambda1 != 0.0 {
        let s = svd(w)?;
        let k = s.rank_dim() - 1;
        let (top, bottom) = (s.sigma[0], s.sigma[k]);
        if bottom > cfg.sigma_floor {
            out.value += cfg.lambda1 * top / bottom;
            out.grad.axpy(
                cfg.lambda1 / bottom,
                &Matrix::outer(&s.left(0), &s.right(0)),
            );
            out.grad.axpy(
                -cfg.lambda1 * top / (bottom * bottom),
                &Matrix::outer(&s.left(k), &s.right(k)),
            );
        } else {
            out.value += cfg.lambda1 * top / cfg.sigma_floor;
            out.degenerate = true;
        }
    }
    if cfg.lambda2 != 0.0 {
        out.value += cfg.lambda2 * w.inner(w);
        out.grad.axpy(2.0 * cfg.lambda2, w);
    }
    Ok(out)
}

/// `λ · Σ p_i log p_i` with `p = softmax(σ(W))`.
///
/// With `H` the penalty value before scaling, `∂H/∂σ_j = p_j (log p_j − H)`,
/// and the matrix gradient follows from `∂σ_j/∂W = u_j v_jᵀ`.
pub fn entropy_penalty(w: &Matrix, lambda: f64) -> Result<Penalty> {
    if !w.is_finite() {
        return Err(Error::InputDomain("non-finite predictor matrix".into()));
    }
    let mut out = Penalty::zero(w);
    if lambda == 0.0 {
        return Ok(out);
    }
    let s = svd(w)?;
    let h = softmax_entropy(&s.sigma);
    let p = crate::linalg::softmax(&s.sigma);
    out.value = lambda * h;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            let coef = lambda * pj * (pj.ln() - h);
            out.grad.axpy(coef, &Matrix::outer(&s.left(j), &s.right(j)));
        }
    }
    Ok(out)
}

/// Spectral and entropy terms together.
pub fn total_penalty(w: &Matrix, cfg: &PenaltyConfig) -> Result<Penalty> {
    let mut out = spectral_penalty(w, cfg)?;
    if cfg.lambda_entropy != 0.0 {
        let e = entropy_penalty(w, cfg.lambda_entropy)?;
        out.value += e.value;
        out.grad.axpy(1.0, &e.grad);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_penalty() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let p = spectral_penalty(&w, &PenaltyConfig::none()).unwrap();
        assert_eq!(p.value, 0.0);
        assert_eq!(p.grad, Matrix::zeros(2, 2));
        let e = entropy_penalty(&w, 0.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.grad, Matrix::zeros(2, 2));
    }

    #[test]
    fn identity_with_unit_weights() {
        let w = Matrix::identity(3);
        let p = spectral_penalty(&w, &PenaltyConfig::default()).unwrap();
        assert!((p.value - 4.0).abs() < 1e-15);
        let norm_only = spectral_penalty(
            &w,
            &PenaltyConfig {
                lambda1: 0.0,
                ..PenaltyConfig::default()
            },
        )
        .unwrap();
        assert_eq!(norm_only.grad, Matrix::identity(3).scale(2.0));
    }

    #[test]
    fn norm_gradient_is_exactly_twice_w() {
        let w = Matrix::from_rows(&[[0.3, -1.2, 2.5], [4.0, 0.0, -0.75]]);
        let cfg = PenaltyConfig {
            lambda1: 0.0,
            lambda2: 0.7,
            ..PenaltyConfig::default()
        };
        let p = spectral_penalty(&w, &cfg).unwrap();
        assert_eq!(p.grad, w.scale(1.4));
    }

    #[test]
    fn equal_spectrum_entropy() {
        let w = Matrix::identity(4).scale(2.0);
        let e = entropy_penalty(&w, 0.5).unwrap();
        assert!((e.value + 0.5 * 4f64.ln()).abs() < 1e-15);
        // Scaling keeps the spectrum equal, so the gradient has no component along W.
        assert!(e.grad.inner(&w).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let w = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let p = spectral_penalty(&w, &PenaltyConfig::default()).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.grad, w.scale(2.0));
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::default().validate().is_ok());
        let bad = PenaltyConfig {
            lambda2: -1.0,
            ..PenaltyConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "lambda2"));
    }
}
