//! Two-task example where a representation with well-conditioned predictors
//! fits the data exactly, while the data-generating representation has
//! predictors with condition number `1/ε`.
//!
//! Coordinates are 1-based in the prose below and 0-based in code.
//! `φ*` reads coordinates (1, 2) with predictors `W* = [[1, ε], [1, −ε]]`;
//! `φ̂` reads coordinates (2, 3) with predictors `Ŵ = [[0, 1], [1, −ε]]`.
//! Task 1 has support points `(1−kε, k, 1)` and `(1+kε, k, −1)`, task 2 has
//! `(1+kε, k, (k−1)/ε)` and `(−1+kε, k, (1+k)/ε)`, labelled +1 then −1.
//! Remaining coordinates are zero.
//!
//! The second point of task 1 gives `⟨w*₁, φ*(x)⟩ = 1 + 2kε` instead of −1.
//! With `corrected = true` its first coordinate becomes `−1−kε`, which makes
//! both factorizations exact.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop3Construction {
    pub epsilon: f64,
    pub dim: usize,
    pub k_val: f64,
    pub corrected: bool,
    pub phi_star: Matrix,
    pub w_star: Matrix,
    pub phi_hat: Matrix,
    pub w_hat: Matrix,
    /// `(task, x, label)` for the four support points.
    pub points: Vec<(usize, Vec<f64>, f64)>,
}

pub fn build_prop3(
    epsilon: f64,
    dim: usize,
    k_val: f64,
    corrected: bool,
) -> Result<Prop3Construction> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InputDomain(format!(
            "epsilon {epsilon} must be positive"
        )));
    }
    if dim < 3 {
        return Err(Error::InputDomain(format!(
            "dimension {dim} must be at least 3"
        )));
    }
    let k = k_val;
    let eps = epsilon;
    let select = |a: usize, b: usize| {
        Matrix::from_fn(dim, 2, |i, j| {
            if (j == 0 && i == a) || (j == 1 && i == b) {
                1.0
            } else {
                0.0
            }
        })
    };
    let point = |c: [f64; 3]| {
        let mut x = vec![0.0; dim];
        x[..3].copy_from_slice(&c);
        x
    };
    let second_first = if corrected {
        -1.0 - k * eps
    } else {
        1.0 + k * eps
    };
    let points = vec![
        (0, point([1.0 - k * eps, k, 1.0]), 1.0),
        (0, point([second_first, k, -1.0]), -1.0),
        (1, point([1.0 + k * eps, k, (k - 1.0) / eps]), 1.0),
        (1, point([-1.0 + k * eps, k, (1.0 + k) / eps]), -1.0),
    ];
    Ok(Prop3Construction {
        epsilon,
        dim,
        k_val,
        corrected,
        phi_star: select(0, 1),
        w_star: Matrix::from_rows(&[[1.0, eps], [1.0, -eps]]),
        phi_hat: select(1, 2),
        w_hat: Matrix::from_rows(&[[0.0, 1.0], [1.0, -eps]]),
        points,
    })
}

impl Prop3Construction {
    fn residuals(&self, phi: &Matrix, w: &Matrix) -> Vec<f64> {
        self.points
            .iter()
            .map(|(t, x, label)| {
                let z = phi.tr_matvec(x);
                let pred: f64 = w.row(*t).iter().zip(&z).map(|(a, b)| a * b).sum();
                pred - label
            })
            .collect()
    }

    /// `⟨w*_t, φ*(x)⟩ − label` per support point.
    pub fn residuals_star(&self) -> Vec<f64> {
        self.residuals(&self.phi_star, &self.w_star)
    }

    /// `⟨ŵ_t, φ̂(x)⟩ − label` per support point.
    pub fn residuals_hat(&self) -> Vec<f64> {
        self.residuals(&self.phi_hat, &self.w_hat)
    }

    /// Closed-form condition number of `Ŵ`.
    pub fn kappa_hat_closed_form(&self) -> f64 {
        let e = self.epsilon;
        let root = (e * e + 4.0).sqrt();
        ((2.0 + e * e + e * root) / (2.0 + e * e - e * root)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::condition_number;

    #[test]
    fn exact_factorizations_for_dyadic_epsilon() {
        for eps in [0.5, 0.25, 2f64.powi(-10), 2f64.powi(-20)] {
            let c = build_prop3(eps, 5, 2.0, true).unwrap();
            assert!(c.residuals_star().iter().all(|&r| r == 0.0), "{eps}");
            assert!(c.residuals_hat().iter().all(|&r| r == 0.0), "{eps}");
        }
    }

    #[test]
    fn verbatim_point_has_known_residual() {
        let (eps, k) = (0.02, 2.0);
        let c = build_prop3(eps, 3, k, false).unwrap();
        let r = c.residuals_star();
        assert!((r[1] - (2.0 + 2.0 * k * eps)).abs() < 1e-12);
        for i in [0, 2, 3] {
            assert!(r[i].abs() < 1e-12);
        }
        assert!(c.residuals_hat().iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn second_task_points_under_star() {
        let (eps, k) = (0.02, 2.0);
        let c = build_prop3(eps, 4, k, false).unwrap();
        let w2 = c.w_star.row(1);
        let a = w2[0] * (1.0 + k * eps) + w2[1] * k;
        let b = w2[0] * (-1.0 + k * eps) + w2[1] * k;
        assert!((a - 1.0).abs() < 1e-15);
        assert!((b + 1.0).abs() < 1e-15);
    }

    #[test]
    fn condition_numbers() {
        let c = build_prop3(0.02, 3, 2.0, false).unwrap();
        assert!((condition_number(&c.w_star, 2).unwrap().value - 50.0).abs() < 1e-10);
        let numeric = condition_number(&c.w_hat, 2).unwrap().value;
        assert!((numeric - c.kappa_hat_closed_form()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_prop3(0.0, 3, 2.0, false).is_err());
        assert!(build_prop3(0.1, 2, 2.0, false).is_err());
    }
}
