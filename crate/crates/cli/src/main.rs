use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spectral_meta::config::{self, Method, MtrConfig, Prop1Config, Prop3Config, RunConfig, Settings};
use spectral_meta::diagnostics::{global_kappa, EpisodeArchive, FrozenModel, Trace};
use spectral_meta::encoder::EncoderParams;
use spectral_meta::experiments::{
    failures, gradcheck_suite, mtr_sweep, prop1_study, prop3_table, seed_list,
    theorem1_study, train_seeds, write_lines, write_train_outputs, Check, Setup, PROP1_HEADER,
    PROP3_HEADER, THEOREM1_HEADER,
};
use spectral_meta::linalg::{fmt_f64, Matrix};
use spectral_meta::maml::ModelParams;
use spectral_meta::mtr_linear::SWEEP_HEADER;
use spectral_meta::{Error, Result};

#[derive(Parser)]
#[command(name = "spectral-meta", version, about = "Spectral diagnostics for episodic meta-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train ProtoNet or MAML over several seeds and write traces.
    Train(Common),
    /// κ of consecutive meta-predictors on linear-regression task sequences.
    Prop1(Common),
    /// Two-task conditioning example over a list of ε.
    Prop3(Common),
    /// Paired normalized and unnormalized ProtoNet runs.
    Theorem1(Common),
    /// Analytic gradients against finite differences.
    Gradcheck(Common),
    /// Planted linear multi-task excess-risk sweep.
    Mtr(Common),
    /// Recompute κ(W) from the checkpoints and archives written by `train`.
    DiagReplay(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load<S: Settings>(&self, seeded: bool) -> Result<S> {
        let mut ov = Vec::new();
        if seeded {
            if let Some(s) = self.seed {
                ov.push(format!("seed={s}"));
            }
            if let Some(n) = self.seeds {
                ov.push(format!("seeds={n}"));
            }
        }
        ov.extend(self.overrides.iter().cloned());
        config::load(self.config.as_deref(), &ov)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SPECTRAL_META_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config {
            key: "SPECTRAL_META_THREADS".into(),
            msg: format!("expected a positive integer, got `{v}`"),
        })?;
        if n == 0 {
            return Err(Error::Config {
                key: "SPECTRAL_META_THREADS".into(),
                msg: "must be positive".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config {
                key: "SPECTRAL_META_THREADS".into(),
                msg: e.to_string(),
            })?;
    }
    Ok(())
}

fn cmd_train(c: &Common) -> Result<Vec<Check>> {
    let cfg: RunConfig = c.load(true)?;
    let dir = c.out_dir()?;
    let runs = train_seeds(&cfg)?;
    println!("{}", write_train_outputs(&runs, dir)?);
    let mut checks = vec![Check::new(
        "finite_losses",
        runs.iter()
            .all(|r| r.trace.records.iter().all(|t| t.loss.is_finite())),
        "every recorded loss is finite",
    )];
    if cfg.method == Method::ProtoNet && cfg.normalize {
        let target = (cfg.n_way as f64).sqrt();
        checks.push(Check::new(
            "unit_prototype_norm",
            runs.iter().all(|r| {
                r.trace
                    .records
                    .iter()
                    .all(|t| (t.frob_wn - target).abs() <= 1e-12)
            }),
            format!("frob_wn = sqrt({}) on every record", cfg.n_way),
        ));
    }
    Ok(checks)
}

fn cmd_prop1(c: &Common) -> Result<Vec<Check>> {
    let cfg: Prop1Config = c.load(true)?;
    let report = prop1_study(&cfg)?;
    write_lines(&c.out_dir()?.join("prop1.csv"), PROP1_HEADER, &report.csv_lines())?;
    if cfg.include_random {
        println!(
            "random sequences with a κ decrease (report only): {}",
            report.random_decreases
        );
    }
    Ok(report.checks)
}

fn cmd_prop3(c: &Common) -> Result<Vec<Check>> {
    let cfg: Prop3Config = c.load(false)?;
    let (rows, checks) = prop3_table(&cfg)?;
    let lines: Vec<String> = rows.iter().map(|r| r.csv_line()).collect();
    println!("{PROP3_HEADER}");
    for l in &lines {
        println!("{l}");
    }
    write_lines(&c.out_dir()?.join("prop3.csv"), PROP3_HEADER, &lines)?;
    Ok(checks)
}

fn cmd_theorem1(c: &Common) -> Result<Vec<Check>> {
    let cfg: RunConfig = c.load(true)?;
    let report = theorem1_study(&cfg)?;
    write_lines(&c.out_dir()?.join("theorem1.csv"), THEOREM1_HEADER, &report.csv_lines())?;
    println!(
        "normalized κ(W) ≤ unnormalized in {:.0}% of seeds",
        100.0 * report.fraction_better
    );
    Ok(report.checks)
}

fn cmd_gradcheck(c: &Common) -> Result<Vec<Check>> {
    let suite = gradcheck_suite()?;
    let checks: Vec<Check> = suite.iter().map(|g| g.check()).collect();
    let lines: Vec<String> = suite
        .iter()
        .zip(&checks)
        .map(|(g, ch)| format!("{},{},{}", g.name, fmt_f64(g.max_rel_error), ch.passed))
        .collect();
    write_lines(
        &c.out_dir()?.join("gradcheck.csv"),
        "name,max_rel_error,passed",
        &lines,
    )?;
    Ok(checks)
}

fn cmd_mtr(c: &Common) -> Result<Vec<Check>> {
    let cfg: MtrConfig = c.load(true)?;
    let report = mtr_sweep(&cfg)?;
    let lines: Vec<String> = report.rows.iter().map(|r| r.csv_line()).collect();
    write_lines(&c.out_dir()?.join("mtr_sweep.csv"), SWEEP_HEADER, &lines)?;
    Ok(report.checks)
}

fn read_summary_kappas(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if f.len() < 3 {
            return Err(bad("too few fields".into()));
        }
        let seed = f[0].parse().map_err(|e| bad(format!("seed: {e}")))?;
        let k = f[2].parse().map_err(|e| bad(format!("global_kappa: {e}")))?;
        out.push((seed, k));
    }
    Ok(out)
}

fn load_model(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<FrozenModel> {
    let enc = EncoderParams::read_checkpoint(BufReader::new(File::open(
        dir.join(format!("checkpoint_seed{seed}.txt")),
    )?))?;
    Ok(match cfg.method {
        Method::ProtoNet => FrozenModel::ProtoNet {
            encoder: enc,
            normalize: cfg.normalize,
        },
        Method::Maml => {
            let head = Matrix::read_csv(BufReader::new(File::open(
                dir.join(format!("head_seed{seed}.csv")),
            )?))?;
            FrozenModel::Maml {
                params: ModelParams::from_parts(enc, &head)?,
                inner_steps: cfg.inner_steps_train,
                alpha: cfg.alpha,
            }
        }
    })
}

fn cmd_diag_replay(c: &Common) -> Result<Vec<Check>> {
    let cfg: RunConfig = c.load(true)?;
    let dir = c.out_dir()?;
    let recorded = read_summary_kappas(&dir.join("summary.csv"))?;
    let mut lines = Vec::new();
    let mut mismatched = Vec::new();
    for seed in seed_list(cfg.seed, cfg.seeds) {
        let archive = EpisodeArchive::load(&dir.join(format!("archive_seed{seed}.csv")))?;
        let trace = Trace::load_csv(&dir.join(format!("trace_seed{seed}.csv")))?;
        let model = load_model(&cfg, dir, seed)?;
        let setup = Setup::new(&cfg, seed)?;
        let sampler = |s: u64| setup.train_episode(s);
        let k = global_kappa(&model, &archive, &sampler, cfg.global_kappa_samples)?;
        let expected = recorded.iter().find(|(s, _)| *s == seed).map(|p| p.1);
        let matches = expected.is_some_and(|e| e.to_bits() == k.value.to_bits());
        if !matches {
            mismatched.push(seed.to_string());
        }
        lines.push(format!(
            "{seed},{},{},{matches}",
            fmt_f64(k.value),
            trace.len()
        ));
    }
    write_lines(&dir.join("replay.csv"), "seed,global_kappa,trace_records,matches", &lines)?;
    Ok(vec![Check::new(
        "replay_matches_summary",
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "every seed reproduced bitwise".to_string()
        } else {
            format!("mismatched seeds {}", mismatched.join(" "))
        },
    )])
}

fn report(checks: &[Check], out: &Path) -> Result<bool> {
    for ch in checks {
        println!(
            "{} {}: {}",
            if ch.passed { "PASS" } else { "FAIL" },
            ch.name,
            ch.detail
        );
    }
    let failed = failures(checks);
    if failed.is_empty() {
        return Ok(true);
    }
    let lines: Vec<String> = failed
        .iter()
        .map(|c| format!("{},\"{}\"", c.name, c.detail.replace('"', "'")))
        .collect();
    write_lines(&out.join("failures.csv"), "check,detail", &lines)?;
    let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
    eprintln!("failed: {}", names.join(","));
    Ok(false)
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    let (common, checks) = match &cli.command {
        Command::Train(c) => (c, cmd_train(c)?),
        Command::Prop1(c) => (c, cmd_prop1(c)?),
        Command::Prop3(c) => (c, cmd_prop3(c)?),
        Command::Theorem1(c) => (c, cmd_theorem1(c)?),
        Command::Gradcheck(c) => (c, cmd_gradcheck(c)?),
        Command::Mtr(c) => (c, cmd_mtr(c)?),
        Command::DiagReplay(c) => (c, cmd_diag_replay(c)?),
    };
    report(&checks, common.out_dir()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
