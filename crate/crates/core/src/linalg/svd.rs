use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};

const MAX_SWEEPS: usize = 80;
const ROTATION_TOL: f64 = 4.0 * f64::EPSILON;

/// Thin singular value decomposition `M = U diag(sigma) Vᵀ`.
///
/// `u` is m×r and `v` is n×r with r = min(m, n); `sigma` is descending.
/// The first entry of each left singular vector that is not numerically
/// zero is non-negative, which makes the factors deterministic.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank_dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn left(&self, i: usize) -> Vec<f64> {
        self.u.column(i)
    }

    pub fn right(&self, i: usize) -> Vec<f64> {
        self.v.column(i)
    }

    pub fn reconstruct(&self) -> Matrix {
        let (m, r) = self.u.shape();
        let n = self.v.rows();
        let mut out = Matrix::zeros(m, n);
        for k in 0..r {
            let s = self.sigma[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = s * self.u[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// Singular value decomposition by one-sided cyclic Jacobi rotations.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InputDomain("svd of an empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::InputDomain(
            "svd input has a non-finite entry".into(),
        ));
    }
    if rows >= cols {
        let (u, sigma, v) = jacobi_tall(m, false);
        Ok(finish(u, sigma, v))
    } else {
        // Work on Mᵀ = V Σ Uᵀ so the rotated side is always the short one.
        let (v, sigma, u) = jacobi_tall(m, true);
        Ok(finish(u, sigma, v))
    }
}

/// Orthogonalizes the columns of `m` (or of `mᵀ` when `transposed`).
///
/// Returns `(left, sigma, right)` as column lists for the tall matrix.
fn jacobi_tall(m: &Matrix, transposed: bool) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (tall, short) = if transposed {
        (m.cols(), m.rows())
    } else {
        (m.rows(), m.cols())
    };
    let mut a: Vec<Vec<f64>> = (0..short)
        .map(|j| {
            if transposed {
                m.row(j).to_vec()
            } else {
                m.column(j)
            }
        })
        .collect();
    let mut v: Vec<Vec<f64>> = (0..short)
        .map(|j| {
            let mut e = vec![0.0; short];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..short {
            for q in p + 1..short {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..short).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut left: Vec<Vec<f64>> = Vec::with_capacity(short);
    let mut right = Vec::with_capacity(short);
    let mut sorted_sigma = Vec::with_capacity(short);
    for &j in &order {
        let s = sigma[j];
        let candidate = if s > 0.0 {
            Some(a[j].iter().map(|x| x / s).collect::<Vec<_>>())
        } else {
            None
        };
        let u = orthonormal_against(&left, candidate, tall);
        left.push(u);
        right.push(v[j].clone());
        sorted_sigma.push(s);
    }
    (left, sorted_sigma, right)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthonormalizes `candidate` against `basis` with two Gram–Schmidt
/// passes, falling back to the best-conditioned standard basis vector when
/// the candidate is missing or numerically dependent.
fn orthonormal_against(basis: &[Vec<f64>], candidate: Option<Vec<f64>>, dim: usize) -> Vec<f64> {
    if let Some(mut u) = candidate {
        project_out(basis, &mut u);
        project_out(basis, &mut u);
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-3 {
            u.iter_mut().for_each(|x| *x /= norm);
            return u;
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        project_out(basis, &mut e);
        project_out(basis, &mut e);
        let norm = dot(&e, &e).sqrt();
        if best.as_ref().is_none_or(|(b, _)| norm > *b + 1e-12) {
            best = Some((norm, e));
        }
    }
    let (norm, mut e) = best.expect("dimension is positive");
    e.iter_mut().for_each(|x| *x /= norm);
    e
}

fn project_out(basis: &[Vec<f64>], u: &mut [f64]) {
    for b in basis {
        let c = dot(b, u);
        for (x, y) in u.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

fn finish(mut left: Vec<Vec<f64>>, sigma: Vec<f64>, mut right: Vec<Vec<f64>>) -> SvdResult {
    for (u, v) in left.iter_mut().zip(right.iter_mut()) {
        let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = u.iter().find(|x| x.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    let r = sigma.len();
    let m = left[0].len();
    let n = right[0].len();
    let u = Matrix::from_fn(m, r, |i, k| left[k][i]);
    let v = Matrix::from_fn(n, r, |j, k| right[k][j]);
    SvdResult { u, sigma, v }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_error(q: &Matrix) -> f64 {
        let g = q.gram();
        g.sub(&Matrix::identity(g.rows())).max_abs()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_task_predictor_matrix() {
        let eps = 0.02;
        let w = Matrix::from_rows(&[[1.0, eps], [1.0, -eps]]);
        let s = svd(&w).unwrap();
        assert!((s.sigma[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma[1] - eps * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wide_and_tall_share_spectrum() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]]);
        let a = svd(&m).unwrap();
        let b = svd(&m.transpose()).unwrap();
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            assert!((x - y).abs() < 1e-13);
        }
        assert_eq!(a.u.shape(), (2, 2));
        assert_eq!(a.v.shape(), (3, 2));
        assert!(a.reconstruct().sub(&m).max_abs() < 1e-13);
    }

    #[test]
    fn rank_deficient_factors_stay_orthonormal() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]]);
        let s = svd(&m).unwrap();
        assert!(s.sigma[1] < 1e-14 && s.sigma[2] < 1e-14);
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert!(orthonormality_error(&s.v) < 1e-12);
        assert!(s.reconstruct().sub(&m).max_abs() < 1e-13);
    }

    #[test]
    fn zero_matrix() {
        let s = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert!(orthonormality_error(&s.u) < 1e-15);
    }

    #[test]
    fn sign_convention_first_entry_non_negative() {
        let m = Matrix::from_rows(&[[-3.0, 0.0], [0.0, -1.0]]);
        let s = svd(&m).unwrap();
        assert_eq!(s.u[(0, 0)], 1.0);
        assert_eq!(s.v[(0, 0)], -1.0);
        assert!(s.reconstruct().sub(&m).max_abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Matrix::from_rows(&[[1.0, f64::NAN]]);
        assert!(matches!(svd(&m), Err(Error::InputDomain(_))));
    }
}
