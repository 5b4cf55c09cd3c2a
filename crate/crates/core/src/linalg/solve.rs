use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

pub fn cholesky(a: &Matrix) -> Result<Cholesky> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::InputDomain(format!(
                "matrix is not positive definite (pivot {j} = {d:e})"
            )));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(Cholesky { l })
}

impl Cholesky {
    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    /// Forward substitution `L⁻¹ b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }
}

pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(cholesky(a)?.solve(b))
}

/// Ridge least squares `argmin_w ‖Xw − y‖² + ridge·‖w‖²` by Householder QR of
/// the augmented system `[X; √ridge·I] w ≈ [y; 0]`.
pub fn least_squares(x: &Matrix, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {n} rows",
            y.len()
        )));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InputDomain(format!(
            "ridge {ridge} must be finite and >= 0"
        )));
    }
    let extra = if ridge > 0.0 { p } else { 0 };
    let m = n + extra;
    if m < p {
        return Err(Error::InputDomain(format!(
            "underdetermined least squares ({n} rows, {p} unknowns) without ridge"
        )));
    }
    // Column-major working copy of the augmented system.
    let root = ridge.sqrt();
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let mut c = x.column(j);
            c.resize(m, 0.0);
            if extra > 0 {
                c[n + j] = root;
            }
            c
        })
        .collect();
    let mut rhs = y.to_vec();
    rhs.resize(m, 0.0);

    for k in 0..p {
        let norm = cols[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InputDomain(format!(
                "rank deficient design at column {k}"
            )));
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 > 0.0 {
            for col in cols.iter_mut().skip(k) {
                let c = 2.0 * dot(&v, &col[k..]) / vnorm2;
                for (a, b) in col[k..].iter_mut().zip(&v) {
                    *a -= c * b;
                }
            }
            let c = 2.0 * dot(&v, &rhs[k..]) / vnorm2;
            for (a, b) in rhs[k..].iter_mut().zip(&v) {
                *a -= c * b;
            }
        }
    }
    let mut w = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = rhs[i];
        for j in i + 1..p {
            s -= cols[j][i] * w[j];
        }
        let d = cols[i][i];
        if d.abs() <= 1e-14 * cols[0][0].abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InputDomain(format!(
                "rank deficient design at column {i}"
            )));
        }
        w[i] = s / d;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
        let x = cholesky_solve(&a, &[2.0, 1.0]).unwrap();
        let back = a.matvec(&x);
        assert!((back[0] - 2.0).abs() < 1e-15 && (back[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn least_squares_identity_design() {
        let w = least_squares(&Matrix::identity(3), &[1.0, -2.0, 0.5], 0.0).unwrap();
        assert_eq!(w.len(), 3);
        for (a, b) in w.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn least_squares_overdetermined_line_fit() {
        // y = 2 + 3t sampled exactly.
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]);
        let y = [2.0, 5.0, 8.0, 11.0];
        let w = least_squares(&x, &y, 0.0).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-13 && (w[1] - 3.0).abs() < 1e-13);
    }

    #[test]
    fn ridge_handles_underdetermined_designs() {
        let x = Matrix::from_rows(&[[1.0, 1.0]]);
        assert!(least_squares(&x, &[2.0], 0.0).is_err());
        let w = least_squares(&x, &[2.0], 1e-8).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6 && (w[1] - 1.0).abs() < 1e-6);
    }
}
