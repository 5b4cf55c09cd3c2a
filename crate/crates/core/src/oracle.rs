//! Slow, independent reference computations for tests.
//!
//! Nothing here calls into the decompositions, solvers or models it is used
//! to check. Matrices are plain `Vec<Vec<f64>>` row lists and the only thing
//! borrowed from the rest of the crate is read access to data containers.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tasks::Episode;

/// Central-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub h: f64,
}

impl FdConfig {
    pub const LOSS: FdConfig = FdConfig { h: 1e-5 };
    pub const SPECTRAL: FdConfig = FdConfig { h: 1e-6 };
}

impl Default for FdConfig {
    fn default() -> Self {
        Self::LOSS
    }
}

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn fd_gradient_vec<F>(f: F, x: &[f64], cfg: FdConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(cfg.h > 0.0) {
        return Err(Error::InputDomain(format!(
            "step {} must be positive",
            cfg.h
        )));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + cfg.h;
        let fp = f(&probe);
        probe[i] = orig - cfg.h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::InputDomain(format!(
                "non-finite evaluation at coordinate {i}"
            )));
        }
        out.push((fp - fm) / (2.0 * cfg.h));
    }
    Ok(out)
}

/// Entrywise central differences of a scalar function of a matrix.
pub fn fd_gradient<F>(f: F, x: &Matrix, cfg: FdConfig) -> Result<Matrix>
where
    F: Fn(&Matrix) -> f64,
{
    let (r, c) = x.shape();
    let g = fd_gradient_vec(
        |v| f(&Matrix::from_vec(r, c, v.to_vec()).expect("shape")),
        x.as_slice(),
        cfg,
    )?;
    Matrix::from_vec(r, c, g)
}

/// Largest `|a − b| / max(|b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        // Pairs visited from the bottom-right corner upwards.
        for p in (0..n).rev() {
            for q in (p + 1..n).rev() {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values, descending, from the eigenvalues of the smaller Gram matrix.
pub fn gram_svd(m: &Matrix) -> Vec<f64> {
    let rows = rows_of(m);
    let (r, c) = m.shape();
    let n = r.min(c);
    let gram: Vec<Vec<f64>> = if c <= r {
        (0..c)
            .map(|i| {
                (0..c)
                    .map(|j| rows.iter().map(|row| row[i] * row[j]).sum())
                    .collect()
            })
            .collect()
    } else {
        (0..r)
            .map(|i| {
                (0..r)
                    .map(|j| rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    };
    symmetric_eigenvalues(gram)
        .into_iter()
        .take(n)
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// Solves `(XᵀX + ridge·I) w = Xᵀy` by Gaussian elimination with partial pivoting.
pub fn least_squares(x: &Matrix, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let rows = rows_of(x);
    let d = x.cols();
    if rows.len() != y.len() {
        return Err(Error::DimensionMismatch("design and target lengths".into()));
    }
    let mut aug: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row: Vec<f64> = (0..d)
                .map(|j| rows.iter().map(|r| r[i] * r[j]).sum::<f64>())
                .collect();
            row[i] += ridge;
            row.push(rows.iter().zip(y).map(|(r, yy)| r[i] * yy).sum());
            row
        })
        .collect();
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .expect("nonempty");
        if aug[piv][col].abs() < 1e-300 {
            return Err(Error::InputDomain("singular normal equations".into()));
        }
        aug.swap(col, piv);
        for r in col + 1..d {
            let f = aug[r][col] / aug[col][col];
            for k in col..=d {
                aug[r][k] -= f * aug[col][k];
            }
        }
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|j| aug[i][j] * w[j]).sum();
        w[i] = (aug[i][d] - s) / aug[i][i];
    }
    Ok(w)
}

/// `‖a − b‖²`, the excess squared-loss risk of predictor `a` over `b` under
/// isotropic Gaussian inputs.
pub fn gaussian_risk_closed_form(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Straight-line forward pass of an MLP given as `(weight rows, bias)` layers,
/// with `act` applied after every layer.
pub fn mlp_forward(
    layers: &[(Vec<Vec<f64>>, Vec<f64>)],
    act: fn(f64) -> f64,
    x: &[f64],
) -> Vec<f64> {
    let mut h = x.to_vec();
    for (w, b) in layers {
        h = w
            .iter()
            .zip(b)
            .map(|(row, bi)| act(row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>() + bi))
            .collect();
    }
    h
}

/// Per-class mean of already-embedded support points, in label order.
pub fn class_means(episode: &Episode, embed: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    (0..episode.n_way)
        .map(|c| {
            let pts: Vec<Vec<f64>> = episode
                .support
                .iter()
                .filter(|e| e.label == c)
                .map(|e| embed(&e.x))
                .collect();
            let n = pts.len() as f64;
            let mut mean = vec![0.0; pts[0].len()];
            for p in &pts {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v / n;
                }
            }
            mean
        })
        .collect()
}
