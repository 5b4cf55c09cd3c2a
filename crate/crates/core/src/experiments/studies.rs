use rayon::prelude::*;

use super::{seed_list, Check};
use crate::config::{MtrConfig, Prop1Config, Prop3Config};
use crate::error::Result;
use crate::linalg::{condition_number, fmt_f64};
use crate::maml::simulate_prop1;
use crate::mtr_linear::{run_planted, PlantedSpec, SweepRow};
use crate::rng::{normal_vec, rng_from_seed, split_seed};
use crate::stats::median;
use crate::tasks::build_prop3;

/// Slack allowed when checking that κ never decreases along the recurrence.
pub const PROP1_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Row {
    /// `colinear` or `random`.
    pub kind: &'static str,
    pub gamma: f64,
    pub d: usize,
    pub seed: u64,
    pub step: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone)]
pub struct Prop1Report {
    pub rows: Vec<Prop1Row>,
    /// Random sequences whose κ dropped at some step, reported without a verdict.
    pub random_decreases: usize,
    pub checks: Vec<Check>,
}

pub const PROP1_HEADER: &str = "kind,gamma,d,seed,step,kappa";

impl Prop1Report {
    pub fn csv_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.kind,
                    fmt_f64(r.gamma),
                    r.d,
                    r.seed,
                    r.step,
                    fmt_f64(r.kappa)
                )
            })
            .collect()
    }
}

fn unit_direction(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    loop {
        let v = normal_vec(&mut rng, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// κ of consecutive meta-predictor pairs for task sequences `θ_t = γᵗ u`,
/// optionally alongside unstructured Gaussian sequences.
pub fn prop1_study(cfg: &Prop1Config) -> Result<Prop1Report> {
    let mut jobs = Vec::new();
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        for (di, &d) in cfg.dims.iter().enumerate() {
            for s in seed_list(cfg.seed, cfg.seeds) {
                jobs.push(("colinear", gamma, d, s, (gi * cfg.dims.len() + di) as u64));
            }
        }
    }
    if cfg.include_random {
        for (di, &d) in cfg.dims.iter().enumerate() {
            for s in seed_list(cfg.seed, cfg.seeds) {
                jobs.push(("random", f64::NAN, d, s, 1_000_000 + di as u64));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(kind, gamma, d, s, stream)| {
            let child = split_seed(s, stream);
            let thetas: Vec<Vec<f64>> = if kind == "colinear" {
                let u = unit_direction(child, d);
                (1..=cfg.steps)
                    .map(|t| u.iter().map(|x| x * gamma.powi(t as i32)).collect())
                    .collect()
            } else {
                let mut rng = rng_from_seed(child);
                (0..cfg.steps).map(|_| normal_vec(&mut rng, d)).collect()
            };
            let trace = simulate_prop1(&thetas, cfg.alpha, cfg.beta, &vec![0.0; d])?;
            let decreased = trace.first_decrease(PROP1_SLACK);
            let rows: Vec<Prop1Row> = trace
                .steps
                .iter()
                .map(|st| Prop1Row {
                    kind,
                    gamma,
                    d,
                    seed: s,
                    step: st.step,
                    kappa: st.kappa.value,
                })
                .collect();
            Ok((kind, gamma, d, s, decreased, rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut violations = Vec::new();
    let mut random_decreases = 0;
    for (kind, gamma, d, s, dec, r) in results {
        if let Some(step) = dec {
            if kind == "colinear" {
                violations.push(format!("gamma={gamma} d={d} seed={s} step={step}"));
            } else {
                random_decreases += 1;
            }
        }
        rows.extend(r);
    }
    let checks = vec![Check::new(
        "colinear_kappa_non_decreasing",
        violations.is_empty(),
        if violations.is_empty() {
            "no decrease on any colinear sequence".to_string()
        } else {
            violations.join("; ")
        },
    )];
    Ok(Prop1Report {
        rows,
        random_decreases,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop3Row {
    pub epsilon: f64,
    pub kappa_w_star: f64,
    pub kappa_w_hat: f64,
    pub kappa_w_hat_closed: f64,
    /// Largest factorization residual with the points as originally stated.
    pub residual_verbatim: f64,
    /// Same with the sign-corrected second point.
    pub residual_corrected: f64,
}

pub const PROP3_HEADER: &str =
    "epsilon,kappa_w_star,kappa_w_hat,kappa_w_hat_closed,residual_verbatim,residual_corrected";

impl Prop3Row {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            fmt_f64(self.epsilon),
            fmt_f64(self.kappa_w_star),
            fmt_f64(self.kappa_w_hat),
            fmt_f64(self.kappa_w_hat_closed),
            fmt_f64(self.residual_verbatim),
            fmt_f64(self.residual_corrected)
        )
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One row per ε, plus the checks on κ(W*), the closed form and the limit.
pub fn prop3_table(cfg: &Prop3Config) -> Result<(Vec<Prop3Row>, Vec<Check>)> {
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        let verbatim = build_prop3(eps, cfg.dim, cfg.k_val, false)?;
        let corrected = build_prop3(eps, cfg.dim, cfg.k_val, true)?;
        rows.push(Prop3Row {
            epsilon: eps,
            kappa_w_star: condition_number(&corrected.w_star, 2)?.value,
            kappa_w_hat: condition_number(&corrected.w_hat, 2)?.value,
            kappa_w_hat_closed: corrected.kappa_hat_closed_form(),
            residual_verbatim: max_abs(
                verbatim
                    .residuals_star()
                    .into_iter()
                    .chain(verbatim.residuals_hat()),
            ),
            residual_corrected: max_abs(
                corrected
                    .residuals_star()
                    .into_iter()
                    .chain(corrected.residuals_hat()),
            ),
        });
    }
    let star_ok = rows
        .iter()
        .all(|r| (r.kappa_w_star - 1.0 / r.epsilon).abs() <= 1e-9);
    let closed_ok = rows
        .iter()
        .all(|r| (r.kappa_w_hat - r.kappa_w_hat_closed).abs() <= 1e-10);
    let mut by_eps: Vec<&Prop3Row> = rows.iter().collect();
    by_eps.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let monotone = by_eps
        .windows(2)
        .all(|w| w[1].kappa_w_hat <= w[0].kappa_w_hat)
        && rows.iter().all(|r| r.kappa_w_hat >= 1.0);
    let checks = vec![
        Check::new(
            "kappa_w_star_is_inverse_epsilon",
            star_ok,
            "|κ(W*) − 1/ε| ≤ 1e-9",
        ),
        Check::new(
            "kappa_w_hat_matches_closed_form",
            closed_ok,
            "|κ(Ŵ) − closed form| ≤ 1e-10",
        ),
        Check::new(
            "kappa_w_hat_decreases_to_one",
            monotone,
            "κ(Ŵ) non-increasing as ε shrinks, and ≥ 1",
        ),
    ];
    Ok((rows, checks))
}

#[derive(Debug, Clone)]
pub struct MtrReport {
    pub rows: Vec<SweepRow>,
    pub checks: Vec<Check>,
}

fn medians_by<K: Copy + PartialEq>(
    rows: &[SweepRow],
    keep: impl Fn(&SweepRow) -> bool,
    key: impl Fn(&SweepRow) -> K,
    order: &[K],
) -> Vec<f64> {
    order
        .iter()
        .map(|&k| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| keep(r) && key(r) == k)
                .map(|r| r.er)
                .collect();
            median(&v)
        })
        .collect()
}

/// Excess risk along the source-sample axis (at `base_kappa`) and the
/// conditioning axis (at `base_n1`).
pub fn mtr_sweep(cfg: &MtrConfig) -> Result<MtrReport> {
    let mut grid: Vec<(usize, f64)> = Vec::new();
    for &n1 in &cfg.n1_list {
        grid.push((n1, cfg.base_kappa));
    }
    for &k in &cfg.kappa_list {
        if !grid.contains(&(cfg.base_n1, k)) {
            grid.push((cfg.base_n1, k));
        }
    }
    let jobs: Vec<(usize, f64, u64)> = grid
        .iter()
        .flat_map(|&(n1, k)| {
            seed_list(cfg.seed, cfg.seeds)
                .into_iter()
                .map(move |s| (n1, k, s))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n1, kappa, s)| {
            let spec = PlantedSpec {
                d: cfg.d,
                k: cfg.k,
                t: cfg.t,
                n1,
                n2: cfg.n2,
                kappa,
                noise: cfg.noise,
            };
            run_planted(&spec, s, cfg.n_mc)
        })
        .collect::<Result<Vec<_>>>()?;

    let nonneg = rows.iter().all(|r| r.er >= -3.0 * r.er_se);
    let mut n1_sorted = cfg.n1_list.clone();
    n1_sorted.sort_unstable();
    n1_sorted.dedup();
    let by_n1 = medians_by(
        &rows,
        |r| r.kappa_planted == cfg.base_kappa,
        |r| r.n1,
        &n1_sorted,
    );
    let mut k_sorted = cfg.kappa_list.clone();
    k_sorted.sort_by(f64::total_cmp);
    k_sorted.dedup();
    let by_k = medians_by(
        &rows,
        |r| r.n1 == cfg.base_n1,
        |r| r.kappa_planted,
        &k_sorted,
    );
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(" > ")
    };
    let checks = vec![
        Check::new(
            "er_non_negative",
            nonneg,
            "every estimate ≥ −3 standard errors",
        ),
        Check::new(
            "er_median_decreases_with_n1",
            by_n1.windows(2).all(|w| w[1] < w[0]),
            format!("medians {}", fmt(&by_n1)),
        ),
        Check::new(
            "er_median_non_decreasing_with_kappa",
            by_k.windows(2).all(|w| w[1] >= w[0]),
            format!(
                "medians {}",
                by_k.iter()
                    .map(|x| format!("{x:.6}"))
                    .collect::<Vec<_>>()
                    .join(" ≤ ")
            ),
        ),
    ];
    Ok(MtrReport { rows, checks })
}
