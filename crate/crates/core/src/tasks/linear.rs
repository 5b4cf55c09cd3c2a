use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::rng::normal_vec;

/// Design matrix and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Vec<f64>,
}

/// Linear-regression task `y = ⟨θ, x⟩ + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTask {
    pub theta: Vec<f64>,
}

pub fn sample_linear_task<R: Rng + ?Sized>(rng: &mut R, d: usize) -> LinearTask {
    LinearTask {
        theta: normal_vec(rng, d),
    }
}

/// `n` samples with standard normal inputs and Gaussian noise of scale
/// `noise_std` (1 for the standard model, 0 to disable).
pub fn task_sample<R: Rng + ?Sized>(
    task: &LinearTask,
    rng: &mut R,
    n: usize,
    noise_std: f64,
) -> (Matrix, Vec<f64>) {
    let d = task.theta.len();
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = normal_vec(rng, d);
        x.row_mut(i).copy_from_slice(&row);
        let signal: f64 = row.iter().zip(&task.theta).map(|(a, b)| a * b).sum();
        let e = if noise_std > 0.0 {
            noise_std * normal_vec(rng, 1)[0]
        } else {
            0.0
        };
        y.push(signal + e);
    }
    (x, y)
}

/// Samples whose empirical moments equal the population ones: the inputs are
/// whitened so that `XᵀX / n = I`, and the noise is projected off the column
/// space of `X` so that `Xᵀe = 0`. The mean squared loss on such a sample is
/// then the population loss up to an additive constant.
pub fn task_sample_moment_matched<R: Rng + ?Sized>(
    task: &LinearTask,
    rng: &mut R,
    n: usize,
    noise_std: f64,
) -> Result<(Matrix, Vec<f64>)> {
    let d = task.theta.len();
    if n <= d {
        return Err(Error::InvalidShape(format!(
            "moment matching needs more than {d} samples, got {n}"
        )));
    }
    let (raw, _) = task_sample(task, rng, n, 0.0);
    let chol = cholesky(&raw.gram().scale(1.0 / n as f64))?;
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let w = chol.solve_lower(raw.row(i));
        x.row_mut(i).copy_from_slice(&w);
    }
    let mut e: Vec<f64> = normal_vec(rng, n)
        .into_iter()
        .map(|v| noise_std * v)
        .collect();
    // With XᵀX = n·I the projection onto col(X) is X Xᵀ / n.
    let coef = x.tr_matvec(&e);
    let proj = x.matvec(&coef);
    for (ei, pi) in e.iter_mut().zip(proj) {
        *ei -= pi / n as f64;
    }
    let y = x
        .matvec(&task.theta)
        .into_iter()
        .zip(e)
        .map(|(s, e)| s + e)
        .collect();
    Ok((x, y))
}
