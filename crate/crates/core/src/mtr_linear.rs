//! Linear multi-task representation learning.
//!
//! Source tasks share a column-orthonormal `B ∈ ℝ^{d×k}` and each has its own
//! `w_t ∈ ℝ^k`, so that `y ≈ X B w_t`. The pair is fitted by alternating least
//! squares. A target predictor is then fitted on the learned features and
//! its excess risk is estimated by Monte Carlo under isotropic Gaussian inputs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, fmt_f64, least_squares, svd, Matrix};
use crate::rng::{normal_vec, rng_from_seed, split_seed};
use crate::tasks::RegressionData;

/// Ridge used when a least-squares solve is rank deficient.
pub const FALLBACK_RIDGE: f64 = 1e-8;
const MAX_ROUNDS: usize = 500;
const REL_TOL: f64 = 1e-10;
const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRepresentation {
    pub b: Matrix,
}

impl LinearRepresentation {
    pub fn features(&self, x: &Matrix) -> Matrix {
        x.matmul(&self.b)
    }
}

#[derive(Debug, Clone)]
pub struct SourceFit {
    pub representation: LinearRepresentation,
    /// Task predictors, one row per task.
    pub w: Matrix,
    /// Objective after every round, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub rank_deficient: bool,
}

impl SourceFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("nonempty")
    }
}

fn solve_ls(x: &Matrix, y: &[f64], flag: &mut bool) -> Result<Vec<f64>> {
    match least_squares(x, y, 0.0) {
        Ok(w) if w.iter().all(|v| v.is_finite()) => Ok(w),
        _ => {
            *flag = true;
            least_squares(x, y, FALLBACK_RIDGE)
        }
    }
}

/// `(1/(T n₁)) Σ_t ‖y_t − X_t B w_t‖²`.
pub fn source_objective(tasks: &[RegressionData], b: &Matrix, w: &Matrix) -> f64 {
    let total: usize = tasks.iter().map(|t| t.y.len()).sum();
    let mut acc = 0.0;
    for (t, task) in tasks.iter().enumerate() {
        let beta = b.matvec(w.row(t));
        let pred = task.x.matvec(&beta);
        acc += pred
            .iter()
            .zip(&task.y)
            .map(|(p, y)| (y - p) * (y - p))
            .sum::<f64>();
    }
    acc / total as f64
}

/// Modified Gram–Schmidt `B = Q R`. Columns that vanish are replaced by
/// standard basis vectors orthogonal to the rest; returns whether that happened.
fn orthonormalize(b: &Matrix) -> (Matrix, Matrix, bool) {
    let (d, k) = b.shape();
    let scale = b.max_abs().max(1.0);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = Matrix::zeros(k, k);
    let mut deficient = false;
    for j in 0..k {
        let mut v = b.column(j);
        for (i, qi) in q.iter().enumerate() {
            let c: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
            r[(i, j)] = c;
            v.iter_mut().zip(qi).for_each(|(vv, qq)| *vv -= c * qq);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 * scale {
            r[(j, j)] = norm;
            q.push(v.into_iter().map(|x| x / norm).collect());
        } else {
            deficient = true;
            let fill = (0..d)
                .map(|e| {
                    let mut u = vec![0.0; d];
                    u[e] = 1.0;
                    for qi in &q {
                        let c = qi[e];
                        u.iter_mut().zip(qi).for_each(|(uu, qq)| *uu -= c * qq);
                    }
                    u
                })
                .max_by(|a, b| {
                    let na: f64 = a.iter().map(|x| x * x).sum();
                    let nb: f64 = b.iter().map(|x| x * x).sum();
                    na.total_cmp(&nb)
                })
                .expect("d > 0");
            let n = fill.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.push(fill.into_iter().map(|x| x / n).collect());
        }
    }
    let qm = Matrix::from_fn(d, k, |i, j| q[j][i]);
    (qm, r, deficient)
}

/// Alternating least squares for `min_{B, W} Σ_t ‖y_t − X_t B w_t‖²`.
pub fn fit_source(tasks: &[RegressionData], k: usize) -> Result<SourceFit> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidShape("no source tasks".into()))?;
    let d = first.x.cols();
    if k == 0 || k > d {
        return Err(Error::InvalidShape(format!("k = {k} outside 1..={d}")));
    }
    let total: usize = tasks.iter().map(|t| t.y.len()).sum();
    if total < d {
        return Err(Error::InvalidShape(format!(
            "{total} source samples for dimension {d}"
        )));
    }
    for t in tasks {
        if t.x.cols() != d || t.x.rows() != t.y.len() {
            return Err(Error::DimensionMismatch("inconsistent source task".into()));
        }
    }

    // Initial subspace: leading left singular vectors of [X_tᵀ y_t].
    let moments = Matrix::from_fn(d, tasks.len(), |i, t| {
        let c = tasks[t].x.tr_matvec(&tasks[t].y);
        c[i]
    });
    let s = svd(&moments)?;
    let r = s.rank_dim().min(k);
    let init = Matrix::from_fn(d, k, |i, j| if j < r { s.u[(i, j)] } else { 0.0 });
    let (mut b, _, mut deficient) = orthonormalize(&init);

    let w_step = |b: &Matrix, flag: &mut bool| -> Result<Matrix> {
        let mut w = Matrix::zeros(tasks.len(), k);
        for (t, task) in tasks.iter().enumerate() {
            let wt = solve_ls(&task.x.matmul(b), &task.y, flag)?;
            w.row_mut(t).copy_from_slice(&wt);
        }
        Ok(w)
    };

    let mut w = w_step(&b, &mut deficient)?;
    let mut trace = vec![source_objective(tasks, &b, &w)];
    let grams: Vec<Matrix> = tasks.iter().map(|t| t.x.gram()).collect();
    for _ in 0..MAX_ROUNDS {
        // B-step: Σ_t (XᵀX ⊗ w wᵀ) vec(B) = Σ_t vec(Xᵀ y wᵀ), row-major vec.
        let n = d * k;
        let mut lhs = Matrix::zeros(n, n);
        let mut rhs = vec![0.0; n];
        for (t, task) in tasks.iter().enumerate() {
            let wt = w.row(t);
            let xty = task.x.tr_matvec(&task.y);
            let g = &grams[t];
            for i in 0..d {
                for a in 0..k {
                    rhs[i * k + a] += xty[i] * wt[a];
                    for j in 0..d {
                        let gij = g[(i, j)];
                        if gij == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            lhs[(i * k + a, j * k + c)] += gij * wt[a] * wt[c];
                        }
                    }
                }
            }
        }
        let vec_b = match cholesky(&lhs) {
            Ok(ch) => ch.solve(&rhs),
            Err(_) => {
                deficient = true;
                let mut reg = lhs.clone();
                let bump =
                    FALLBACK_RIDGE * (1.0 + (0..n).map(|i| lhs[(i, i)]).sum::<f64>() / n as f64);
                for i in 0..n {
                    reg[(i, i)] += bump;
                }
                cholesky(&reg)?.solve(&rhs)
            }
        };
        let b_raw = Matrix::from_vec(d, k, vec_b)?;
        let (q, _, def) = orthonormalize(&b_raw);
        deficient |= def;
        b = q;
        w = w_step(&b, &mut deficient)?;
        let obj = source_objective(tasks, &b, &w);
        let prev = *trace.last().expect("nonempty");
        trace.push(obj);
        if (prev - obj).abs() <= REL_TOL * prev.max(f64::MIN_POSITIVE) || obj == 0.0 {
            break;
        }
    }
    Ok(SourceFit {
        representation: LinearRepresentation { b },
        w,
        objective_trace: trace,
        rank_deficient: deficient,
    })
}

/// Target predictor on the learned features, ridge `1e-8`.
pub fn fit_target(rep: &LinearRepresentation, target: &RegressionData) -> Result<Vec<f64>> {
    if target.y.is_empty() {
        return Err(Error::InvalidShape("empty target set".into()));
    }
    least_squares(&rep.features(&target.x), &target.y, FALLBACK_RIDGE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessRiskEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_montecarlo: usize,
}

/// Monte-Carlo excess risk of `x ↦ ⟨x, β̂⟩` against `x ↦ ⟨x, β*⟩` under
/// `x ~ N(0, I)` and `y = ⟨x, β*⟩ + N(0, σ²)`.
///
/// Each sample contributes `(y − ⟨x, β̂⟩)² − (y − ⟨x, β*⟩)²`, so the estimate is
/// unbiased for `‖β̂ − β*‖²`. Work is split into fixed chunks with derived
/// seeds and reduced in chunk order.
pub fn excess_risk_vectors(
    beta_hat: &[f64],
    beta_star: &[f64],
    noise: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ExcessRiskEstimate> {
    if beta_hat.len() != beta_star.len() {
        return Err(Error::DimensionMismatch("predictor lengths differ".into()));
    }
    if n_mc < 2 {
        return Err(Error::InputDomain(format!("n_mc = {n_mc} is too small")));
    }
    let delta: Vec<f64> = beta_hat.iter().zip(beta_star).map(|(a, b)| a - b).collect();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(split_seed(seed, c as u64));
            let count = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let x = normal_vec(&mut rng, delta.len());
                let e: f64 = noise * normal_vec(&mut rng, 1)[0];
                let xd: f64 = x.iter().zip(&delta).map(|(a, b)| a * b).sum();
                let v = xd * xd - 2.0 * e * xd;
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = n_mc as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(ExcessRiskEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_montecarlo: n_mc,
    })
}

/// Excess risk of `(B̂, ŵ)` against the planted `(B*, w*)`.
pub fn excess_risk(
    b_hat: &LinearRepresentation,
    w_hat: &[f64],
    b_star: &Matrix,
    w_star: &[f64],
    noise: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ExcessRiskEstimate> {
    if n_mc < 1000 {
        return Err(Error::InputDomain(format!(
            "n_mc = {n_mc}, at least 1000 required"
        )));
    }
    excess_risk_vectors(
        &b_hat.b.matvec(w_hat),
        &b_star.matvec(w_star),
        noise,
        n_mc,
        seed,
    )
}

/// Random matrix with orthonormal columns (QR of a Gaussian matrix).
pub fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_vec(rows, cols, normal_vec(rng, rows * cols)).expect("shape");
    orthonormalize(&g).0
}

/// `T × k` predictors `U diag(σ) Vᵀ` with a geometric spectrum from 1 down to
/// `1/κ`, rescaled so that `‖W*‖²_F = T`.
pub fn planted_predictors<R: Rng + ?Sized>(
    t: usize,
    k: usize,
    kappa: f64,
    rng: &mut R,
) -> Result<Matrix> {
    if t < k || k == 0 {
        return Err(Error::InvalidShape(format!("{t} tasks for rank {k}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InputDomain(format!("kappa {kappa} must be >= 1")));
    }
    let u = random_orthonormal(t, k, rng);
    let v = random_orthonormal(k, k, rng);
    let mut sigma: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                1.0
            } else {
                kappa.powf(-(i as f64) / (k as f64 - 1.0))
            }
        })
        .collect();
    let norm2: f64 = sigma.iter().map(|s| s * s).sum();
    let scale = (t as f64 / norm2).sqrt();
    sigma.iter_mut().for_each(|s| *s *= scale);
    let us = Matrix::from_fn(t, k, |i, j| u[(i, j)] * sigma[j]);
    Ok(us.matmul(&v.transpose()))
}

/// `‖(I − B̂B̂ᵀ) B*‖_F`: distance between the learned and planted subspaces.
pub fn subspace_distance(b_hat: &Matrix, b_star: &Matrix) -> f64 {
    let proj = b_hat.matmul(&b_hat.transpose().matmul(b_star));
    b_star
        .sub(&proj)
        .as_slice()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One planted problem: `T` source tasks, one target task.
#[derive(Debug, Clone)]
pub struct PlantedProblem {
    pub b_star: Matrix,
    pub w_star: Matrix,
    pub w_target: Vec<f64>,
    pub sources: Vec<RegressionData>,
    pub target: RegressionData,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub n1: usize,
    pub n2: usize,
    pub kappa: f64,
    pub noise: f64,
}

fn gaussian_data<R: Rng + ?Sized>(
    beta: &[f64],
    n: usize,
    noise: f64,
    rng: &mut R,
) -> RegressionData {
    let d = beta.len();
    let x = Matrix::from_vec(n, d, normal_vec(rng, n * d)).expect("shape");
    let y = x
        .matvec(beta)
        .into_iter()
        .map(|s| s + noise * normal_vec(rng, 1)[0])
        .collect();
    RegressionData { x, y }
}

pub fn planted_problem<R: Rng + ?Sized>(spec: &PlantedSpec, rng: &mut R) -> Result<PlantedProblem> {
    let b_star = random_orthonormal(spec.d, spec.k, rng);
    let w_star = planted_predictors(spec.t, spec.k, spec.kappa, rng)?;
    let sources = (0..spec.t)
        .map(|t| gaussian_data(&b_star.matvec(w_star.row(t)), spec.n1, spec.noise, rng))
        .collect();
    let raw = normal_vec(rng, spec.k);
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w_target: Vec<f64> = raw.into_iter().map(|v| v / n).collect();
    let target = gaussian_data(&b_star.matvec(&w_target), spec.n2, spec.noise, rng);
    Ok(PlantedProblem {
        b_star,
        w_star,
        w_target,
        sources,
        target,
        noise: spec.noise,
    })
}

/// One row of the sweep output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n1: usize,
    pub t: usize,
    pub k: usize,
    pub kappa_planted: f64,
    pub seed: u64,
    pub er: f64,
    pub er_se: f64,
}

pub const SWEEP_HEADER: &str = "n1,T,k,kappa_planted,seed,er,er_se";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n1,
            self.t,
            self.k,
            fmt_f64(self.kappa_planted),
            self.seed,
            fmt_f64(self.er),
            fmt_f64(self.er_se)
        )
    }
}

/// Full pipeline on a freshly planted problem drawn from `seed`.
pub fn run_planted(spec: &PlantedSpec, seed: u64, n_mc: usize) -> Result<SweepRow> {
    let mut rng = rng_from_seed(split_seed(seed, 0));
    let problem = planted_problem(spec, &mut rng)?;
    let fit = fit_source(&problem.sources, spec.k)?;
    let w_hat = fit_target(&fit.representation, &problem.target)?;
    let er = excess_risk(
        &fit.representation,
        &w_hat,
        &problem.b_star,
        &problem.w_target,
        problem.noise,
        n_mc,
        split_seed(seed, 1),
    )?;
    Ok(SweepRow {
        n1: spec.n1,
        t: spec.t,
        k: spec.k,
        kappa_planted: spec.kappa,
        seed,
        er: er.value,
        er_se: er.std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormalize_recovers_qr() {
        let b = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0], [1.0, 0.0]]);
        let (q, r, def) = orthonormalize(&b);
        assert!(!def);
        assert!(q.gram().sub(&Matrix::identity(2)).max_abs() < 1e-14);
        assert!(q.matmul(&r).sub(&b).max_abs() < 1e-14);
    }

    #[test]
    fn orthonormalize_completes_dependent_columns() {
        let b = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]);
        let (q, _, def) = orthonormalize(&b);
        assert!(def);
        assert!(q.gram().sub(&Matrix::identity(2)).max_abs() < 1e-14);
    }

    #[test]
    fn planted_spectrum() {
        let w = planted_predictors(20, 3, 10.0, &mut rng_from_seed(3)).unwrap();
        let s = svd(&w).unwrap().sigma;
        assert!((s[0] / s[2] - 10.0).abs() < 1e-9);
        assert!((w.inner(&w) - 20.0).abs() < 1e-10);
    }

    #[test]
    fn perfect_predictor_has_zero_risk() {
        let e = excess_risk_vectors(&[1.0, 2.0], &[1.0, 2.0], 1.0, 5000, 9).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn realizable_fit_reaches_zero_objective() {
        let spec = PlantedSpec {
            d: 8,
            k: 2,
            t: 10,
            n1: 30,
            n2: 10,
            kappa: 3.0,
            noise: 0.0,
        };
        let p = planted_problem(&spec, &mut rng_from_seed(5)).unwrap();
        let fit = fit_source(&p.sources, 2).unwrap();
        assert!(fit.objective() <= 1e-12, "{}", fit.objective());
        let b = &fit.representation.b;
        assert!(b.gram().sub(&Matrix::identity(2)).max_abs() < 1e-8);
        let start = fit.objective_trace[0];
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * start);
        }
    }

    #[test]
    fn small_mc_budget_is_rejected() {
        let rep = LinearRepresentation {
            b: Matrix::identity(2),
        };
        assert!(excess_risk(
            &rep,
            &[0.0, 0.0],
            &Matrix::identity(2),
            &[1.0, 0.0],
            1.0,
            10,
            0
        )
        .is_err());
    }
}
