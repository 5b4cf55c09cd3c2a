use super::{Evaluation, MetaObjective};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, Kappa, Matrix};
use crate::tasks::RegressionData;

/// `L(w) = ½ · mean_i (y_i − ⟨x_i, w⟩)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRegressionObjective {
    pub dim: usize,
}

impl MetaObjective for LinearRegressionObjective {
    type Data = RegressionData;

    fn param_count(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, w: &[f64], data: &RegressionData) -> Result<Evaluation> {
        super::check_len(self.dim, w)?;
        if data.x.cols() != self.dim || data.x.rows() != data.y.len() || data.y.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} design with {} targets for dimension {}",
                data.x.rows(),
                data.x.cols(),
                data.y.len(),
                self.dim
            )));
        }
        let n = data.y.len() as f64;
        let resid: Vec<f64> = data
            .x
            .matvec(w)
            .into_iter()
            .zip(&data.y)
            .map(|(p, y)| p - y)
            .collect();
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n;
        let grad = data
            .x
            .tr_matvec(&resid)
            .into_iter()
            .map(|g| g / n)
            .collect();
        Ok(Evaluation {
            loss,
            grad,
            accuracy: None,
        })
    }

    fn hvp(&self, _w: &[f64], data: &RegressionData, v: &[f64]) -> Result<Vec<f64>> {
        super::check_len(self.dim, v)?;
        let n = data.y.len() as f64;
        Ok(data
            .x
            .tr_matvec(&data.x.matvec(v))
            .into_iter()
            .map(|g| g / n)
            .collect())
    }
}

/// Closed-form meta-update of single-step MAML on the linear-Gaussian model:
/// `ŵ_t = ŵ_{t−1} − c (ŵ_{t−1} − θ_t)` with `c = β (1 − α)²`.
///
/// Returns `ŵ_0, …, ŵ_T`.
pub fn linear_recurrence(thetas: &[Vec<f64>], alpha: f64, beta: f64, w0: &[f64]) -> Vec<Vec<f64>> {
    let c = beta * (1.0 - alpha) * (1.0 - alpha);
    let mut out = Vec::with_capacity(thetas.len() + 1);
    out.push(w0.to_vec());
    for theta in thetas {
        let prev = out.last().expect("nonempty");
        let next = prev
            .iter()
            .zip(theta)
            .map(|(w, t)| w - c * (w - t))
            .collect();
        out.push(next);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Prop1Step {
    pub step: usize,
    /// `[θ_i; θ_{i+1}]`.
    pub theta_pair: Matrix,
    /// `[ŵ_i; ŵ_{i+1}]`.
    pub w_pair: Matrix,
    pub kappa: Kappa,
}

#[derive(Debug, Clone)]
pub struct Prop1Trace {
    pub steps: Vec<Prop1Step>,
}

impl Prop1Trace {
    /// First step `i` with `κ_{i+1} < κ_i − slack`, if any.
    pub fn first_decrease(&self, slack: f64) -> Option<usize> {
        self.steps
            .windows(2)
            .find(|w| w[1].kappa.value < w[0].kappa.value - slack)
            .map(|w| w[0].step)
    }
}

/// Condition numbers of consecutive predictor pairs along the recurrence,
/// for `i = 1, …, T−1`.
pub fn simulate_prop1(
    thetas: &[Vec<f64>],
    alpha: f64,
    beta: f64,
    w0: &[f64],
) -> Result<Prop1Trace> {
    let d = w0.len();
    if d < 2 {
        return Err(Error::InputDomain(format!(
            "dimension {d} must be at least 2"
        )));
    }
    if thetas.iter().any(|t| t.len() != d) {
        return Err(Error::DimensionMismatch("θ of differing dimension".into()));
    }
    let w = linear_recurrence(thetas, alpha, beta, w0);
    let mut steps = Vec::new();
    for i in 1..thetas.len() {
        let w_pair = Matrix::from_rows(&[&w[i][..], &w[i + 1][..]]);
        let theta_pair = Matrix::from_rows(&[&thetas[i - 1][..], &thetas[i][..]]);
        let kappa = condition_number(&w_pair, 2)?;
        steps.push(Prop1Step {
            step: i,
            theta_pair,
            w_pair,
            kappa,
        });
    }
    Ok(Prop1Trace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;

    #[test]
    fn first_two_predictors() {
        let (alpha, beta) = (0.3, 0.8);
        let c = beta * (1.0 - alpha) * (1.0 - alpha);
        let t1 = vec![1.0, -2.0];
        let t2 = vec![0.5, 4.0];
        let w = linear_recurrence(&[t1.clone(), t2.clone()], alpha, beta, &[0.0, 0.0]);
        for j in 0..2 {
            assert!((w[1][j] - c * t1[j]).abs() < 1e-15);
            let expected = c * (1.0 - c) * t1[j] + c * t2[j];
            assert!((w[2][j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_inner_rate_freezes_predictors() {
        let thetas = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.0]];
        let w = linear_recurrence(&thetas, 1.0, 0.5, &[0.25, -0.5]);
        assert!(w.iter().all(|wi| wi == &vec![0.25, -0.5]));
    }

    #[test]
    fn colinear_sequence_from_zero_is_rank_one() {
        let base = [0.3, -1.1, 0.7];
        let thetas: Vec<Vec<f64>> = (0..10)
            .map(|i| base.iter().map(|b| b * 2f64.powi(i)).collect())
            .collect();
        let trace = simulate_prop1(&thetas, 0.1, 0.5, &[0.0; 3]).unwrap();
        assert_eq!(trace.first_decrease(1e-12), None);
        for s in &trace.steps {
            let sv = svd(&s.w_pair).unwrap().sigma;
            assert!(sv[1] <= 1e-12 * sv[0]);
            assert!(s.kappa.degenerate);
        }
    }

    #[test]
    fn orthogonal_thetas_are_recorded() {
        let thetas = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let trace = simulate_prop1(&thetas, 0.1, 0.5, &[0.0, 0.0]).unwrap();
        assert_eq!(trace.steps.len(), 3);
        assert!(trace.steps.iter().all(|s| s.kappa.value >= 1.0));
    }
}
