//! Training traces of the predictor matrix and the frozen-encoder recomputation
//! of κ over archived episodes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, fmt_f64, frobenius_norm, gram_singular_values, kappa_from_sigma, Kappa,
    Matrix, KAPPA_FLOOR,
};
use crate::maml::{ClassifierObjective, MetaObjective, ModelParams};
use crate::protonet::{compute_prototypes, normalize_rows};
use crate::tasks::Episode;

pub const TRACE_HEADER: &str = "step,kappa_wn,frob_wn,accuracy,loss";

/// Number of archived episodes replayed by default.
pub const DEFAULT_GLOBAL_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub kappa_wn: f64,
    pub degenerate: bool,
    pub frob_wn: f64,
    pub accuracy: f64,
    pub loss: f64,
}

/// Measures `W_N` and bundles it with the step's accuracy and loss.
pub fn track(step: usize, w_n: &Matrix, accuracy: f64, loss: f64) -> Result<TraceRecord> {
    if w_n.rows() == 0 || w_n.cols() == 0 {
        return Err(Error::InvalidShape("empty predictor matrix".into()));
    }
    let kappa = condition_number(w_n, w_n.rows().min(w_n.cols()))?;
    Ok(TraceRecord {
        step,
        kappa_wn: kappa.value,
        degenerate: kappa.degenerate,
        frob_wn: frobenius_norm(w_n),
        accuracy,
        loss,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_kappa(&self) -> Option<f64> {
        self.records.iter().map(|r| r.kappa_wn).reduce(f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step,
                fmt_f64(r.kappa_wn),
                fmt_f64(r.frob_wn),
                fmt_f64(r.accuracy),
                fmt_f64(r.loss)
            )?;
        }
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Trace> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some(TRACE_HEADER) {
            return Err(perr(1, format!("expected header `{TRACE_HEADER}`")));
        }
        let mut trace = Trace::default();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(perr(lineno, format!("{} fields, expected 5", f.len())));
            }
            let step = f[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| perr(lineno, format!("step: {e}")))?;
            let mut v = [0.0; 4];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| perr(lineno, format!("`{s}`: {e}")))?;
            }
            trace.push(TraceRecord {
                step,
                kappa_wn: v[0],
                degenerate: v[0] >= 1.0 / KAPPA_FLOOR,
                frob_wn: v[1],
                accuracy: v[2],
                loss: v[3],
            });
        }
        Ok(trace)
    }

    pub fn load_csv(path: &Path) -> Result<Trace> {
        Self::read_csv(BufReader::new(File::open(path)?), path)
    }
}

/// Content hash of an episode: shape, then every feature bit pattern and label.
pub fn episode_digest(ep: &Episode) -> u64 {
    let mut h = Sha256::new();
    for n in [ep.n_way, ep.k_shot, ep.n_query] {
        h.update((n as u64).to_le_bytes());
    }
    for e in ep.support.iter().chain(&ep.query) {
        for v in &e.x {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((e.label as u64).to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("32-byte digest"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchiveEntry {
    pub index: u64,
    pub seed: u64,
    pub digest: u64,
}

/// Seeds of every training episode, each with a digest of the episode it produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeArchive {
    pub entries: Vec<ArchiveEntry>,
}

const ARCHIVE_HEADER: &str = "index,seed,digest";

impl EpisodeArchive {
    pub fn record(&mut self, seed: u64, episode: &Episode) {
        let index = self.entries.len() as u64;
        self.entries.push(ArchiveEntry {
            index,
            seed,
            digest: episode_digest(episode),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Regenerates entry `i` and checks it against the stored digest.
    pub fn replay<F>(&self, i: usize, sampler: &F) -> Result<Episode>
    where
        F: Fn(u64) -> Result<Episode> + Sync,
    {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::Integrity(format!("no archive entry {i}")))?;
        let ep = sampler(entry.seed)?;
        let got = episode_digest(&ep);
        if got != entry.digest {
            return Err(Error::Integrity(format!(
                "episode {} (seed {}) digest {got:016x}, archived {:016x}",
                entry.index, entry.seed, entry.digest
            )));
        }
        Ok(ep)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{ARCHIVE_HEADER}")?;
        for e in &self.entries {
            writeln!(w, "{},{},{:016x}", e.index, e.seed, e.digest)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some(ARCHIVE_HEADER) {
            return Err(perr(1, format!("expected header `{ARCHIVE_HEADER}`")));
        }
        let mut out = Self::default();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 3 {
                return Err(perr(lineno, format!("{} fields, expected 3", f.len())));
            }
            let entry = ArchiveEntry {
                index: f[0]
                    .parse()
                    .map_err(|e| perr(lineno, format!("index: {e}")))?,
                seed: f[1]
                    .parse()
                    .map_err(|e| perr(lineno, format!("seed: {e}")))?,
                digest: u64::from_str_radix(f[2], 16)
                    .map_err(|e| perr(lineno, format!("digest: {e}")))?,
            };
            if entry.index != out.entries.len() as u64 {
                return Err(perr(lineno, format!("index {} out of order", entry.index)));
            }
            out.entries.push(entry);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?), path)
    }
}

/// A trained model with its encoder held fixed.
#[derive(Debug, Clone)]
pub enum FrozenModel {
    ProtoNet {
        encoder: EncoderParams,
        normalize: bool,
    },
    Maml {
        params: ModelParams,
        inner_steps: usize,
        alpha: f64,
    },
}

impl FrozenModel {
    /// Linear predictors of one episode: prototypes, or adapted head rows.
    pub fn predictors(&self, ep: &Episode) -> Result<Matrix> {
        match self {
            FrozenModel::ProtoNet { encoder, normalize } => {
                let mut p = compute_prototypes(ep, encoder)?;
                if *normalize {
                    p = normalize_rows(&p)?;
                }
                Ok(p.prototypes)
            }
            FrozenModel::Maml {
                params,
                inner_steps,
                alpha,
            } => {
                let obj: ClassifierObjective = params.objective();
                let layout = obj.predictor_layout().expect("classifier has a head");
                let adapted = crate::maml::inner_adapt(
                    &obj,
                    &params.to_flat(),
                    &ep.support,
                    *inner_steps,
                    *alpha,
                )?;
                Ok(layout.extract(&adapted))
            }
        }
    }
}

/// Predictors of the last `m` archived episodes (all when `m` exceeds the
/// archive), stacked in archive order.
pub fn global_predictors<F>(
    model: &FrozenModel,
    archive: &EpisodeArchive,
    sampler: &F,
    m: usize,
) -> Result<Matrix>
where
    F: Fn(u64) -> Result<Episode> + Sync,
{
    if archive.is_empty() {
        return Err(Error::Integrity("empty episode archive".into()));
    }
    let start = archive.len().saturating_sub(m.max(1));
    let blocks = (start..archive.len())
        .into_par_iter()
        .map(|i| model.predictors(&archive.replay(i, sampler)?))
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&blocks)
}

/// κ of the frozen-model predictor matrix, computed through its Gram matrix.
pub fn global_kappa<F>(
    model: &FrozenModel,
    archive: &EpisodeArchive,
    sampler: &F,
    m: usize,
) -> Result<Kappa>
where
    F: Fn(u64) -> Result<Episode> + Sync,
{
    let w = global_predictors(model, archive, sampler, m)?;
    let sigma = gram_singular_values(&w)?;
    Ok(kappa_from_sigma(&sigma, w.rows().min(w.cols())))
}
