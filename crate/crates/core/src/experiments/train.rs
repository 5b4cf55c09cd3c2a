use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{seed_list, write_lines, Check};
use crate::config::{Method, RunConfig};
use crate::diagnostics::{global_kappa, track, EpisodeArchive, FrozenModel, Trace};
use crate::encoder::{EncoderParams, Optimizer};
use crate::error::Result;
use crate::linalg::{fmt_f64, Kappa};
use crate::maml::{MamlConfig, MamlLearner, MetaObjective, MetaTask, ModelParams};
use crate::protonet::{proto_accuracy, proto_loss};
use crate::rng::{rng_from_seed, split_seed};
use crate::stats::{mean_ci95, MeanCi};
use crate::tasks::{
    load_dataset, split_classes, ClassSource, Episode, EpisodeShape, GaussianFamily, LabeledPool,
};

/// Where episode classes come from.
#[derive(Debug, Clone)]
pub enum Benchmark {
    Gaussian(GaussianFamily),
    Pool(LabeledPool),
}

impl ClassSource for Benchmark {
    fn class_count(&self) -> usize {
        match self {
            Benchmark::Gaussian(g) => g.class_count(),
            Benchmark::Pool(p) => p.class_count(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Benchmark::Gaussian(g) => g.dim(),
            Benchmark::Pool(p) => p.dim(),
        }
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        class: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            Benchmark::Gaussian(g) => g.draw(class, count, rng),
            Benchmark::Pool(p) => p.draw(class, count, rng),
        }
    }

    fn check_capacity(&self, pool: &[usize], per_class: usize) -> Result<()> {
        match self {
            Benchmark::Gaussian(g) => g.check_capacity(pool, per_class),
            Benchmark::Pool(p) => p.check_capacity(pool, per_class),
        }
    }
}

/// Episode source of one seed, split into training and held-out classes.
#[derive(Debug, Clone)]
pub struct Setup {
    pub source: Benchmark,
    pub train_classes: Vec<usize>,
    pub eval_classes: Vec<usize>,
    pub shape: EpisodeShape,
}

const FAMILY_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

impl Setup {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let source = match &cfg.dataset {
            Some(path) => Benchmark::Pool(load_dataset(path)?),
            None => Benchmark::Gaussian(GaussianFamily::new(
                cfg.dim,
                cfg.radius,
                cfg.noise,
                cfg.class_pool,
                &mut rng_from_seed(split_seed(seed, FAMILY_STREAM)),
            )?),
        };
        let (train_classes, eval_classes) =
            split_classes(source.class_count(), cfg.holdout_classes)?;
        Ok(Self {
            source,
            train_classes,
            eval_classes,
            shape: EpisodeShape::new(cfg.n_way, cfg.k_shot, cfg.n_query),
        })
    }

    pub fn train_episode(&self, seed: u64) -> Result<Episode> {
        self.source
            .episode_from(&self.train_classes, self.shape, &mut rng_from_seed(seed))
    }

    pub fn eval_episode(&self, seed: u64) -> Result<Episode> {
        self.source
            .episode_from(&self.eval_classes, self.shape, &mut rng_from_seed(seed))
    }
}

/// Everything a single-seed training run produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: Trace,
    pub archive: EpisodeArchive,
    pub model: FrozenModel,
    pub global_kappa: Kappa,
    /// Mean query accuracy on held-out episodes.
    pub eval_accuracy: f64,
}

fn episode_seed(seed: u64, stream: u64, i: usize) -> u64 {
    split_seed(split_seed(seed, stream), i as u64)
}

fn evaluate(cfg: &RunConfig, setup: &Setup, model: &FrozenModel, seed: u64) -> Result<f64> {
    let accs = (0..cfg.eval_episodes)
        .into_par_iter()
        .map(|j| {
            let ep = setup.eval_episode(episode_seed(seed, EVAL_STREAM, j))?;
            match model {
                FrozenModel::ProtoNet { encoder, normalize } => {
                    proto_accuracy(&ep, encoder, *normalize)
                }
                FrozenModel::Maml { params, .. } => {
                    let obj = params.objective();
                    let adapted =
                        params.inner_adapt(&ep.support, cfg.inner_steps_eval, cfg.alpha)?;
                    Ok(obj
                        .evaluate(&adapted.to_flat(), &ep.query)?
                        .accuracy
                        .expect("classifier reports accuracy"))
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

fn train_protonet(
    cfg: &RunConfig,
    setup: &Setup,
    seed: u64,
) -> Result<(Trace, EpisodeArchive, FrozenModel)> {
    let mut encoder = EncoderParams::init(
        &cfg.encoder_dims(),
        cfg.activation,
        &mut rng_from_seed(split_seed(seed, INIT_STREAM)),
    );
    let mut opt = Optimizer::new(cfg.update_rule(), encoder.param_count());
    let penalty = cfg.penalty();
    let mut trace = Trace::default();
    let mut archive = EpisodeArchive::default();
    for step in 0..cfg.episodes {
        let s = episode_seed(seed, TRAIN_STREAM, step);
        let ep = setup.train_episode(s)?;
        archive.record(s, &ep);
        let out = proto_loss(&ep, &encoder, cfg.normalize, &penalty)?;
        trace.push(track(step, &out.prototypes, out.accuracy, out.loss)?);
        opt.apply(encoder.as_flat_mut(), &out.grad)?;
    }
    Ok((
        trace,
        archive,
        FrozenModel::ProtoNet {
            encoder,
            normalize: cfg.normalize,
        },
    ))
}

fn train_maml(
    cfg: &RunConfig,
    setup: &Setup,
    seed: u64,
) -> Result<(Trace, EpisodeArchive, FrozenModel)> {
    let init = ModelParams::init(
        &cfg.encoder_dims(),
        cfg.activation,
        cfg.n_way,
        &mut rng_from_seed(split_seed(seed, INIT_STREAM)),
    );
    let obj = init.objective();
    let mut learner = MamlLearner::new(
        init.to_flat(),
        MamlConfig {
            alpha: cfg.alpha,
            inner_steps: cfg.inner_steps_train,
            order: cfg.order,
            penalty: cfg.penalty(),
        },
        cfg.update_rule(),
    );
    let mut trace = Trace::default();
    let mut archive = EpisodeArchive::default();
    for step in 0..cfg.outer_steps() {
        let mut batch = Vec::with_capacity(cfg.batch);
        for b in 0..cfg.batch {
            let s = episode_seed(seed, TRAIN_STREAM, step * cfg.batch + b);
            let ep = setup.train_episode(s)?;
            archive.record(s, &ep);
            batch.push(MetaTask {
                support: ep.support,
                query: ep.query,
            });
        }
        let m = learner.outer_step(&obj, &batch)?;
        let w_n = m.w_n.expect("classifier exposes its head");
        trace.push(track(
            step,
            &w_n,
            m.query_accuracy.unwrap_or(f64::NAN),
            m.query_loss + m.penalty,
        )?);
    }
    Ok((
        trace,
        archive,
        FrozenModel::Maml {
            params: ModelParams::from_flat(&obj, &learner.params)?,
            inner_steps: cfg.inner_steps_train,
            alpha: cfg.alpha,
        },
    ))
}

/// Trains one seed, then evaluates on held-out classes and recomputes κ(W)
/// over the archived training episodes with the final model.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let setup = Setup::new(cfg, seed)?;
    let (trace, archive, model) = match cfg.method {
        Method::ProtoNet => train_protonet(cfg, &setup, seed)?,
        Method::Maml => train_maml(cfg, &setup, seed)?,
    };
    let sampler = |s: u64| setup.train_episode(s);
    let global = global_kappa(&model, &archive, &sampler, cfg.global_kappa_samples)?;
    let eval_accuracy = evaluate(cfg, &setup, &model, seed)?;
    Ok(SeedRun {
        seed,
        trace,
        archive,
        model,
        global_kappa: global,
        eval_accuracy,
    })
}

/// `cfg.seeds` runs starting at `cfg.seed`, in seed order.
pub fn train_seeds(cfg: &RunConfig) -> Result<Vec<SeedRun>> {
    seed_list(cfg.seed, cfg.seeds)
        .into_par_iter()
        .map(|s| train_seed(cfg, s))
        .collect()
}

pub const SUMMARY_HEADER: &str = "seed,eval_accuracy,global_kappa,max_kappa_wn,final_frob_wn";

impl SeedRun {
    pub fn summary_line(&self) -> String {
        let last = self.trace.records.last();
        format!(
            "{},{},{},{},{}",
            self.seed,
            fmt_f64(self.eval_accuracy),
            fmt_f64(self.global_kappa.value),
            fmt_f64(self.trace.max_kappa().unwrap_or(f64::NAN)),
            fmt_f64(last.map_or(f64::NAN, |r| r.frob_wn))
        )
    }

    /// Trace, archive and checkpoint files for this seed under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let s = self.seed;
        self.trace
            .export_csv(&dir.join(format!("trace_seed{s}.csv")))?;
        self.archive
            .save(&dir.join(format!("archive_seed{s}.csv")))?;
        let mut w = BufWriter::new(File::create(dir.join(format!("checkpoint_seed{s}.txt")))?);
        match &self.model {
            FrozenModel::ProtoNet { encoder, .. } => encoder.write_checkpoint(&mut w)?,
            FrozenModel::Maml { params, .. } => {
                params.encoder.write_checkpoint(&mut w)?;
                let mut h = BufWriter::new(File::create(dir.join(format!("head_seed{s}.csv")))?);
                params.head_with_bias().write_csv(&mut h)?;
                h.flush()?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes per-seed files plus `summary.csv` and returns the aggregate line.
pub fn write_train_outputs(runs: &[SeedRun], dir: &Path) -> Result<String> {
    for r in runs {
        r.write_files(dir)?;
    }
    let lines: Vec<String> = runs.iter().map(SeedRun::summary_line).collect();
    write_lines(&dir.join("summary.csv"), SUMMARY_HEADER, &lines)?;
    Ok(summary_text(runs))
}

pub fn summary_text(runs: &[SeedRun]) -> String {
    let acc: Vec<f64> = runs.iter().map(|r| r.eval_accuracy).collect();
    let kappa: Vec<f64> = runs.iter().map(|r| r.global_kappa.value).collect();
    let max_wn = runs
        .iter()
        .filter_map(|r| r.trace.max_kappa())
        .fold(f64::NEG_INFINITY, f64::max);
    format!(
        "accuracy {} | kappa(W) {} | max kappa(W_N) {:.6}",
        mean_ci95(&acc),
        mean_ci95(&kappa),
        max_wn
    )
}

/// `|frob − √n_way| ≤ 1e-12` on every record.
fn unit_prototype_check(run: &SeedRun, n_way: usize) -> bool {
    let target = (n_way as f64).sqrt();
    run.trace
        .records
        .iter()
        .all(|r| (r.frob_wn - target).abs() <= 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Row {
    pub seed: u64,
    pub kappa_normalized: f64,
    pub kappa_unnormalized: f64,
    pub acc_normalized: f64,
    pub acc_unnormalized: f64,
    pub unit_prototypes: bool,
}

#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub rows: Vec<Theorem1Row>,
    pub fraction_better: f64,
    pub checks: Vec<Check>,
}

pub const THEOREM1_HEADER: &str =
    "seed,kappa_normalized,kappa_unnormalized,acc_normalized,acc_unnormalized,unit_prototypes";

impl Theorem1Report {
    pub fn csv_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.seed,
                    fmt_f64(r.kappa_normalized),
                    fmt_f64(r.kappa_unnormalized),
                    fmt_f64(r.acc_normalized),
                    fmt_f64(r.acc_unnormalized),
                    r.unit_prototypes
                )
            })
            .collect()
    }
}

/// Paired normalized and unnormalized ProtoNet runs on the same seeds.
pub fn theorem1_study(cfg: &RunConfig) -> Result<Theorem1Report> {
    let mut base = cfg.clone();
    base.method = Method::ProtoNet;
    let rows = seed_list(cfg.seed, cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let mut n = base.clone();
            n.normalize = true;
            let mut u = base.clone();
            u.normalize = false;
            let rn = train_seed(&n, s)?;
            let ru = train_seed(&u, s)?;
            Ok(Theorem1Row {
                seed: s,
                kappa_normalized: rn.global_kappa.value,
                kappa_unnormalized: ru.global_kappa.value,
                acc_normalized: rn.eval_accuracy,
                acc_unnormalized: ru.eval_accuracy,
                unit_prototypes: unit_prototype_check(&rn, cfg.n_way),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let better = rows
        .iter()
        .filter(|r| r.kappa_normalized <= r.kappa_unnormalized)
        .count();
    let fraction_better = better as f64 / rows.len() as f64;
    let unit = rows.iter().all(|r| r.unit_prototypes);
    let checks = vec![
        Check::new(
            "normalized_kappa_not_larger",
            fraction_better >= 0.8,
            format!("{better}/{} seeds", rows.len()),
        ),
        Check::new(
            "unit_prototype_norm",
            unit,
            format!(
                "frob_wn = sqrt({}) on every normalized record: {unit}",
                cfg.n_way
            ),
        ),
    ];
    Ok(Theorem1Report {
        rows,
        fraction_better,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegRow {
    pub seed: u64,
    pub max_kappa_plain: f64,
    pub max_kappa_reg: f64,
    pub acc_plain: f64,
    pub acc_reg: f64,
    /// Extremes of `frob_wn / frob_wn(episode 50)` over the regularized run.
    pub frob_ratio_min: f64,
    pub frob_ratio_max: f64,
}

#[derive(Debug, Clone)]
pub struct RegularizationReport {
    pub rows: Vec<RegRow>,
    pub kappa_fraction: f64,
    pub accuracy_diff: MeanCi,
    pub checks: Vec<Check>,
}

pub const REG_HEADER: &str =
    "seed,max_kappa_plain,max_kappa_reg,acc_plain,acc_reg,frob_ratio_min,frob_ratio_max";

impl RegularizationReport {
    pub fn csv_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.seed,
                    fmt_f64(r.max_kappa_plain),
                    fmt_f64(r.max_kappa_reg),
                    fmt_f64(r.acc_plain),
                    fmt_f64(r.acc_reg),
                    fmt_f64(r.frob_ratio_min),
                    fmt_f64(r.frob_ratio_max)
                )
            })
            .collect()
    }
}

/// Index of the first trace record by which `episodes` training episodes were consumed.
fn record_at_episode(cfg: &RunConfig, episodes: usize) -> usize {
    let per_step = match cfg.method {
        Method::ProtoNet => 1,
        Method::Maml => cfg.batch,
    };
    episodes.div_ceil(per_step).max(1) - 1
}

/// Paired MAML runs without and with the spectral penalty (`λ₁ = λ₂ = 1`).
pub fn regularization_comparison(cfg: &RunConfig) -> Result<RegularizationReport> {
    let mut plain = cfg.clone();
    plain.method = Method::Maml;
    plain.lambda1 = 0.0;
    plain.lambda2 = 0.0;
    plain.lambda_entropy = 0.0;
    let mut reg = plain.clone();
    reg.lambda1 = 1.0;
    reg.lambda2 = 1.0;
    let anchor = record_at_episode(&reg, 50);
    let rows = seed_list(cfg.seed, cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let rp = train_seed(&plain, s)?;
            let rr = train_seed(&reg, s)?;
            let recs = &rr.trace.records;
            let base = recs[anchor.min(recs.len() - 1)].frob_wn;
            let ratios = recs[anchor.min(recs.len() - 1)..]
                .iter()
                .map(|r| r.frob_wn / base);
            let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x), b.max(x))
            });
            Ok(RegRow {
                seed: s,
                max_kappa_plain: rp.trace.max_kappa().unwrap_or(f64::NAN),
                max_kappa_reg: rr.trace.max_kappa().unwrap_or(f64::NAN),
                acc_plain: rp.eval_accuracy,
                acc_reg: rr.eval_accuracy,
                frob_ratio_min: lo,
                frob_ratio_max: hi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let higher = rows
        .iter()
        .filter(|r| r.max_kappa_plain > r.max_kappa_reg)
        .count();
    let kappa_fraction = higher as f64 / n as f64;
    let diffs: Vec<f64> = rows.iter().map(|r| r.acc_reg - r.acc_plain).collect();
    let accuracy_diff = mean_ci95(&diffs);
    let bounded = rows
        .iter()
        .all(|r| r.frob_ratio_max <= 2.0 && r.frob_ratio_min >= 0.5);
    let checks = vec![
        Check::new(
            "plain_max_kappa_exceeds_regularized",
            kappa_fraction >= 0.8,
            format!("{higher}/{n} seeds"),
        ),
        Check::new(
            "regularized_frob_within_2x",
            bounded,
            format!(
                "ratio range [{:.4}, {:.4}]",
                rows.iter()
                    .map(|r| r.frob_ratio_min)
                    .fold(f64::INFINITY, f64::min),
                rows.iter()
                    .map(|r| r.frob_ratio_max)
                    .fold(f64::NEG_INFINITY, f64::max)
            ),
        ),
        Check::new(
            "regularized_accuracy_non_inferior",
            accuracy_diff.mean >= -0.005,
            format!("mean difference {accuracy_diff}"),
        ),
    ];
    Ok(RegularizationReport {
        rows,
        kappa_fraction,
        accuracy_diff,
        checks,
    })
}
