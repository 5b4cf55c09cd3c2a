//! End-to-end acceptance suite. Criteria run one after another so the reported
//! runtimes are not inflated by other tests sharing the machine.

use std::path::Path;
use std::time::{Duration, Instant};

use spectral_meta::config::{Method, MtrConfig, Prop1Config, Prop3Config, RunConfig};
use spectral_meta::encoder::{EncoderParams, UpdateRule};
use spectral_meta::experiments::{
    failures, gradcheck_suite, mtr_sweep, prop1_study, prop3_table, regularization_comparison,
    theorem1_study, train_seeds, write_lines, write_train_outputs, Check, Setup, PROP1_HEADER,
    PROP3_HEADER, REG_HEADER, THEOREM1_HEADER,
};
use spectral_meta::linalg::{fmt_f64, svd, Matrix};
use spectral_meta::maml::{
    linear_recurrence, LinearRegressionObjective, MamlConfig, MamlLearner, MetaTask, Order,
};
use spectral_meta::mtr_linear::{run_planted, PlantedSpec, SWEEP_HEADER};
use spectral_meta::protonet::{class_probabilities, class_probabilities_linear, compute_prototypes};
use spectral_meta::regularizers::PenaltyConfig;
use spectral_meta::rng::{normal_vec, rng_from_seed, split_seed};
use spectral_meta::tasks::{sample_linear_task, task_sample_moment_matched, RegressionData};
use spectral_meta::{oracle, Result};

use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn from_checks(checks: &[Check]) -> Self {
        let failed = failures(checks);
        let detail = checks
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Self {
            passed: failed.is_empty(),
            detail,
        }
    }
}

fn svd_suite() -> Result<Outcome> {
    let mut rng = rng_from_seed(0x5eed);
    let (mut ortho, mut recon, mut agree) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = rng.random_range(1..=16);
        let n = rng.random_range(1..=16);
        let a = Matrix::from_vec(m, n, normal_vec(&mut rng, m * n))?;
        let s = svd(&a)?;
        let r = s.rank_dim();
        for (f, dim) in [(&s.u, m), (&s.v, n)] {
            let g = f.transpose().matmul(f);
            for i in 0..r {
                for j in 0..r {
                    let target = if i == j { 1.0 } else { 0.0 };
                    ortho = ortho.max((g[(i, j)] - target).abs());
                }
            }
            assert_eq!(f.rows(), dim);
        }
        let diff = a.sub(&s.reconstruct());
        let rel = (diff.inner(&diff) / a.inner(&a)).sqrt();
        recon = recon.max(rel);
        let reference = oracle::gram_svd(&a);
        for (x, y) in s.sigma.iter().zip(&reference) {
            agree = agree.max((x - y).abs());
        }
    }
    Ok(Outcome {
        passed: ortho <= 1e-10 && recon <= 1e-8 && agree <= 1e-10,
        detail: format!(
            "orthonormality {ortho:.2e}, reconstruction {recon:.2e}, oracle agreement {agree:.2e}"
        ),
    })
}

fn prop3() -> Result<Outcome> {
    let (rows, checks) = prop3_table(&Prop3Config::default())?;
    let mut out = Outcome::from_checks(&checks);
    let worst = rows
        .iter()
        .map(|r| (r.kappa_w_hat - r.kappa_w_hat_closed).abs())
        .fold(0.0, f64::max);
    out.detail.push_str(&format!("; closed-form gap {worst:.2e}"));
    Ok(out)
}

fn prop1() -> Result<Outcome> {
    let cfg = Prop1Config::default();
    let report = prop1_study(&cfg)?;
    let mut out = Outcome::from_checks(&report.checks);
    out.detail.push_str(&format!(
        "; {} sequences",
        cfg.gammas.len() * cfg.dims.len() * cfg.seeds
    ));
    Ok(out)
}

fn maml_closed_form() -> Result<Outcome> {
    let (d, n, steps) = (5, 10_000, 50);
    let (alpha, beta) = (0.3, 0.5);
    let mut rng = rng_from_seed(split_seed(4, 0));
    let obj = LinearRegressionObjective { dim: d };
    let cfg = MamlConfig {
        alpha,
        inner_steps: 1,
        order: Order::Second,
        penalty: PenaltyConfig::none(),
    };
    let mut learner = MamlLearner::new(vec![0.0; d], cfg, UpdateRule::Sgd { lr: beta });
    let mut thetas = Vec::new();
    let mut generic = vec![learner.params.clone()];
    for _ in 0..steps {
        let task = sample_linear_task(&mut rng, d);
        let (xs, ys) = task_sample_moment_matched(&task, &mut rng, n, 1.0)?;
        let (xq, yq) = task_sample_moment_matched(&task, &mut rng, n, 1.0)?;
        let batch = [MetaTask {
            support: RegressionData { x: xs, y: ys },
            query: RegressionData { x: xq, y: yq },
        }];
        learner.outer_step(&obj, &batch)?;
        generic.push(learner.params.clone());
        thetas.push(task.theta);
    }
    let closed = linear_recurrence(&thetas, alpha, beta, &vec![0.0; d]);
    let gap = generic
        .iter()
        .zip(&closed)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok(Outcome {
        passed: gap <= 1e-6,
        detail: format!("max trajectory gap {gap:.2e} over {steps} outer steps"),
    })
}

fn gradients() -> Result<Outcome> {
    let checks: Vec<Check> = gradcheck_suite()?.iter().map(|g| g.check()).collect();
    Ok(Outcome::from_checks(&checks))
}

fn theorem1() -> Result<Outcome> {
    let report = theorem1_study(&RunConfig::default())?;
    Ok(Outcome::from_checks(&report.checks))
}

fn maml_config() -> RunConfig {
    RunConfig {
        method: Method::Maml,
        ..RunConfig::default()
    }
}

fn regularization(select: &[&str]) -> Result<Outcome> {
    let report = regularization_comparison(&maml_config())?;
    let picked: Vec<Check> = report
        .checks
        .into_iter()
        .filter(|c| select.contains(&c.name.as_str()))
        .collect();
    assert_eq!(picked.len(), select.len());
    let mut out = Outcome::from_checks(&picked);
    if select.contains(&"regularized_accuracy_non_inferior") {
        let sign = if report.accuracy_diff.mean >= 0.0 { "+" } else { "-" };
        out.detail
            .push_str(&format!("; sign of mean difference {sign}"));
    }
    Ok(out)
}

fn logit_identity() -> Result<Outcome> {
    let cfg = RunConfig::default();
    let mut gap = 0.0f64;
    for s in 0..100u64 {
        let setup = Setup::new(&cfg, s)?;
        let ep = setup.train_episode(split_seed(s, 3))?;
        let enc = EncoderParams::init(
            &cfg.encoder_dims(),
            cfg.activation,
            &mut rng_from_seed(split_seed(s, 1)),
        );
        let protos = compute_prototypes(&ep, &enc)?.prototypes;
        let rows = ep
            .query
            .iter()
            .map(|q| enc.embed(&q.x))
            .collect::<Result<Vec<_>>>()?;
        let queries = Matrix::from_rows(&rows);
        let a = class_probabilities(&queries, &protos);
        let b = class_probabilities_linear(&queries, &protos);
        gap = gap.max(a.sub(&b).max_abs());
    }
    Ok(Outcome {
        passed: gap <= 1e-12,
        detail: format!("max probability gap {gap:.2e} over 100 episodes"),
    })
}

fn mtr() -> Result<Outcome> {
    let spec = PlantedSpec {
        d: 10,
        k: 3,
        t: 20,
        n1: 50,
        n2: 50,
        kappa: 1.0,
        noise: 0.0,
    };
    let clean = run_planted(&spec, 0, 20_000)?;
    let report = mtr_sweep(&MtrConfig::default())?;
    let mut checks = vec![Check::new(
        "noiseless_recovery",
        clean.er <= 1e-6,
        format!("excess risk {:.2e}", clean.er),
    )];
    checks.extend(report.checks);
    Ok(Outcome::from_checks(&checks))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("readable output dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).expect("readable output"),
            )
        })
        .collect();
    out.sort();
    out
}

/// Every driver writes the same CSV files the command-line runner does.
fn write_all(dir: &Path) -> Result<()> {
    let small = RunConfig {
        episodes: 40,
        seeds: 2,
        eval_episodes: 10,
        global_kappa_samples: 20,
        ..RunConfig::default()
    };
    for (name, cfg) in [
        ("protonet", RunConfig { normalize: true, ..small.clone() }),
        ("maml", RunConfig { method: Method::Maml, ..small.clone() }),
    ] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub)?;
        write_train_outputs(&train_seeds(&cfg)?, &sub)?;
    }
    let p1 = prop1_study(&Prop1Config {
        seeds: 2,
        steps: 10,
        include_random: true,
        ..Prop1Config::default()
    })?;
    write_lines(&dir.join("prop1.csv"), PROP1_HEADER, &p1.csv_lines())?;
    let (rows, _) = prop3_table(&Prop3Config::default())?;
    let lines: Vec<String> = rows.iter().map(|r| r.csv_line()).collect();
    write_lines(&dir.join("prop3.csv"), PROP3_HEADER, &lines)?;
    let t1 = theorem1_study(&small)?;
    write_lines(&dir.join("theorem1.csv"), THEOREM1_HEADER, &t1.csv_lines())?;
    let reg = regularization_comparison(&RunConfig {
        method: Method::Maml,
        ..small.clone()
    })?;
    write_lines(&dir.join("regularization.csv"), REG_HEADER, &reg.csv_lines())?;
    let g: Vec<String> = gradcheck_suite()?
        .iter()
        .map(|g| format!("{},{}", g.name, fmt_f64(g.max_rel_error)))
        .collect();
    write_lines(&dir.join("gradcheck.csv"), "name,max_rel_error", &g)?;
    let m = mtr_sweep(&MtrConfig {
        seeds: 2,
        n_mc: 2000,
        ..MtrConfig::default()
    })?;
    let lines: Vec<String> = m.rows.iter().map(|r| r.csv_line()).collect();
    write_lines(&dir.join("mtr_sweep.csv"), SWEEP_HEADER, &lines)?;
    Ok(())
}

fn determinism() -> Result<Outcome> {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    write_all(a.path())?;
    write_all(b.path())?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["", "protonet", "maml"] {
        let fa: Vec<_> = files_in(&a.path().join(sub))
            .into_iter()
            .filter(|(n, _)| n.ends_with(".csv") || n.ends_with(".txt"))
            .collect();
        let fb: Vec<_> = files_in(&b.path().join(sub))
            .into_iter()
            .filter(|(n, _)| n.ends_with(".csv") || n.ends_with(".txt"))
            .collect();
        if fa.len() != fb.len() {
            differing.push(format!("{sub}: file sets differ"));
        }
        for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
            compared += 1;
            if na != nb || ca != cb {
                differing.push(format!("{sub}/{na}"));
            }
        }
    }
    Ok(Outcome {
        passed: differing.is_empty() && compared > 0,
        detail: if differing.is_empty() {
            format!("{compared} files byte-identical across reruns")
        } else {
            format!("differing: {}", differing.join(" "))
        },
    })
}

type Criterion = (&'static str, Duration, fn() -> Result<Outcome>);

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("svd property suite", Duration::from_secs(30), svd_suite),
        ("two-task conditioning example", Duration::from_secs(1), prop3),
        ("colinear κ monotonicity", Duration::from_secs(10), prop1),
        ("MAML closed-form equivalence", Duration::from_secs(120), maml_closed_form),
        ("gradient suite", Duration::from_secs(60), gradients),
        ("normalized prototypes condition κ(W)", Duration::from_secs(600), theorem1),
        ("regularization bounds κ(W_N)", Duration::from_secs(900), || {
            regularization(&[
                "plain_max_kappa_exceeds_regularized",
                "regularized_frob_within_2x",
            ])
        }),
        ("regularization non-inferiority", Duration::from_secs(900), || {
            regularization(&["regularized_accuracy_non_inferior"])
        }),
        ("ProtoNet logit identity", Duration::from_secs(5), logit_identity),
        ("linear multi-task pipeline", Duration::from_secs(300), mtr),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    println!();
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok(o) => (o.passed && elapsed <= *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "{} [{}] {name}: {detail} ({:.2}s of {}s budget)",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
