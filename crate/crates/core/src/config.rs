//! Flat `key = value` run configurations.
//!
//! A config file holds one assignment per line; blank lines and lines starting
//! with `#` are skipped. Overrides use the same `key=value` form and are applied
//! after the file, in order. Unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::{Activation, UpdateRule};
use crate::error::{Error, Result};
use crate::maml::Order;
use crate::regularizers::PenaltyConfig;

pub trait Settings: Default {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn validate(&self) -> Result<()>;
}

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| cfg_err(key, format!("cannot parse `{value}`: {e}")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items = value
        .split(',')
        .map(|s| parse_value(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(cfg_err(key, "empty list"));
    }
    Ok(items)
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// Applies every assignment in `text` to `target`.
pub fn apply_text<S: Settings>(target: &mut S, text: &str, path: &Path) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_assignment(line).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        target.set(k, v)?;
    }
    Ok(())
}

/// Defaults, then the file (if any), then overrides; validated at the end.
pub fn load<S: Settings>(path: Option<&Path>, overrides: &[String]) -> Result<S> {
    let mut s = S::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        apply_text(&mut s, &text, p)?;
    }
    for o in overrides {
        let (k, v) =
            split_assignment(o).ok_or_else(|| cfg_err(o, "override must look like key=value"))?;
        s.set(k, v)?;
    }
    s.validate()?;
    Ok(s)
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(cfg_err(key, "must be positive"));
    }
    Ok(())
}

fn finite_positive(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(cfg_err(
            key,
            format!("must be finite and positive, got {v}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ProtoNet,
    Maml,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "protonet" => Ok(Method::ProtoNet),
            "maml" => Ok(Method::Maml),
            other => Err(cfg_err(
                "method",
                format!("unknown method `{other}` (protonet, maml)"),
            )),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ProtoNet => "protonet",
            Method::Maml => "maml",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(cfg_err(
                "optimizer",
                format!("unknown optimizer `{other}` (adam, sgd)"),
            )),
        }
    }
}

/// Episodic training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub normalize: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_entropy: f64,
    pub sigma_floor: f64,
    /// Inner-loop step size.
    pub alpha: f64,
    /// Outer-loop learning rate.
    pub beta: f64,
    pub inner_steps_train: usize,
    pub inner_steps_eval: usize,
    pub order: Order,
    pub optimizer: OptimizerKind,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    /// Training episodes; MAML takes `episodes / batch` outer steps.
    pub episodes: usize,
    pub batch: usize,
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    pub radius: f64,
    pub noise: f64,
    pub class_pool: usize,
    pub holdout_classes: usize,
    pub seed: u64,
    pub seeds: usize,
    pub eval_episodes: usize,
    pub global_kappa_samples: usize,
    pub dataset: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::ProtoNet,
            normalize: false,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda_entropy: 0.0,
            sigma_floor: 1e-8,
            alpha: 0.01,
            beta: 1e-3,
            inner_steps_train: 5,
            inner_steps_eval: 10,
            order: Order::Second,
            optimizer: OptimizerKind::Adam,
            n_way: 5,
            k_shot: 1,
            n_query: 5,
            episodes: 2000,
            batch: 4,
            dim: 16,
            hidden: vec![32],
            embed_dim: 8,
            activation: Activation::Tanh,
            radius: 4.0,
            noise: 1.0,
            class_pool: 64,
            holdout_classes: 16,
            seed: 0,
            seeds: 20,
            eval_episodes: 200,
            global_kappa_samples: 500,
            dataset: None,
        }
    }
}

impl RunConfig {
    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_entropy: self.lambda_entropy,
            sigma_floor: self.sigma_floor,
        }
    }

    pub fn update_rule(&self) -> UpdateRule {
        match self.optimizer {
            OptimizerKind::Adam => UpdateRule::adam(self.beta),
            OptimizerKind::Sgd => UpdateRule::Sgd { lr: self.beta },
        }
    }

    /// `[dim, hidden…, embed_dim]`.
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.dim];
        d.extend_from_slice(&self.hidden);
        d.push(self.embed_dim);
        d
    }

    /// Outer-loop steps of the run.
    pub fn outer_steps(&self) -> usize {
        match self.method {
            Method::ProtoNet => self.episodes,
            Method::Maml => self.episodes / self.batch,
        }
    }
}

impl Settings for RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "method" => self.method = v.trim().parse()?,
            "normalize" => self.normalize = parse_value(key, v)?,
            "lambda1" => self.lambda1 = parse_value(key, v)?,
            "lambda2" => self.lambda2 = parse_value(key, v)?,
            "lambda_entropy" => self.lambda_entropy = parse_value(key, v)?,
            "sigma_floor" => self.sigma_floor = parse_value(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "inner_steps_train" => self.inner_steps_train = parse_value(key, v)?,
            "inner_steps_eval" => self.inner_steps_eval = parse_value(key, v)?,
            "order" => self.order = v.trim().parse()?,
            "optimizer" => self.optimizer = v.trim().parse()?,
            "n_way" => self.n_way = parse_value(key, v)?,
            "k_shot" => self.k_shot = parse_value(key, v)?,
            "n_query" => self.n_query = parse_value(key, v)?,
            "episodes" => self.episodes = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "dim" => self.dim = parse_value(key, v)?,
            "hidden" => {
                self.hidden = if v.trim().is_empty() {
                    Vec::new()
                } else {
                    parse_list(key, v)?
                }
            }
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "activation" => self.activation = v.trim().parse()?,
            "radius" => self.radius = parse_value(key, v)?,
            "noise" => self.noise = parse_value(key, v)?,
            "class_pool" => self.class_pool = parse_value(key, v)?,
            "holdout_classes" => self.holdout_classes = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "seeds" => self.seeds = parse_value(key, v)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, v)?,
            "global_kappa_samples" => self.global_kappa_samples = parse_value(key, v)?,
            "dataset" => {
                self.dataset = (!v.trim().is_empty()).then(|| PathBuf::from(v.trim()));
            }
            other => return Err(cfg_err(other, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.penalty().validate()?;
        for (k, v) in [
            ("inner_steps_eval", self.inner_steps_eval),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("n_query", self.n_query),
            ("episodes", self.episodes),
            ("batch", self.batch),
            ("dim", self.dim),
            ("embed_dim", self.embed_dim),
            ("seeds", self.seeds),
            ("eval_episodes", self.eval_episodes),
            ("global_kappa_samples", self.global_kappa_samples),
        ] {
            positive(k, v)?;
        }
        if self.hidden.contains(&0) {
            return Err(cfg_err("hidden", "layer widths must be positive"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(cfg_err(
                "alpha",
                format!("must be non-negative, got {}", self.alpha),
            ));
        }
        finite_positive("beta", self.beta)?;
        finite_positive("radius", self.radius)?;
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(cfg_err(
                "noise",
                format!("must be non-negative, got {}", self.noise),
            ));
        }
        if self.method == Method::Maml && self.episodes < self.batch {
            return Err(cfg_err(
                "episodes",
                format!(
                    "{} episodes do not fill one batch of {}",
                    self.episodes, self.batch
                ),
            ));
        }
        if self.dataset.is_none() {
            if self.holdout_classes >= self.class_pool {
                return Err(cfg_err(
                    "holdout_classes",
                    format!("leaves no training classes out of {}", self.class_pool),
                ));
            }
            if self.n_way > self.holdout_classes
                || self.n_way > self.class_pool - self.holdout_classes
            {
                return Err(cfg_err(
                    "n_way",
                    format!(
                        "{}-way episodes need that many classes in both splits",
                        self.n_way
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Colinear predictor-sequence study.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Config {
    pub gammas: Vec<f64>,
    pub dims: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
    pub seed: u64,
    pub seeds: usize,
    /// Also record non-colinear sequences, reported without a verdict.
    pub include_random: bool,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            gammas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            dims: vec![2, 5, 10],
            alpha: 0.1,
            beta: 0.5,
            steps: 50,
            seed: 0,
            seeds: 20,
            include_random: false,
        }
    }
}

impl Settings for Prop1Config {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "gammas" => self.gammas = parse_list(key, v)?,
            "dims" => self.dims = parse_list(key, v)?,
            "alpha" => self.alpha = parse_value(key, v)?,
            "beta" => self.beta = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "seeds" => self.seeds = parse_value(key, v)?,
            "include_random" => self.include_random = parse_value(key, v)?,
            other => return Err(cfg_err(other, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(cfg_err("gammas", "ratios must be finite and positive"));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(cfg_err("dims", "dimensions must be at least 2"));
        }
        if self.steps < 2 {
            return Err(cfg_err("steps", "at least 2 steps are needed"));
        }
        positive("seeds", self.seeds)?;
        finite_positive("beta", self.beta)?;
        if !self.alpha.is_finite() {
            return Err(cfg_err("alpha", "must be finite"));
        }
        Ok(())
    }
}

/// Two-task conditioning example.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop3Config {
    pub epsilons: Vec<f64>,
    pub dim: usize,
    pub k_val: f64,
}

impl Default for Prop3Config {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 0.1, 0.02, 0.001],
            dim: 3,
            k_val: 2.0,
        }
    }
}

impl Settings for Prop3Config {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "epsilons" => self.epsilons = parse_list(key, v)?,
            "dim" => self.dim = parse_value(key, v)?,
            "k_val" => self.k_val = parse_value(key, v)?,
            other => return Err(cfg_err(other, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(cfg_err("epsilons", "values must be finite and positive"));
        }
        if self.dim < 3 {
            return Err(cfg_err("dim", "must be at least 3"));
        }
        if !self.k_val.is_finite() {
            return Err(cfg_err("k_val", "must be finite"));
        }
        Ok(())
    }
}

/// Planted linear multi-task sweep over source sample sizes and predictor
/// conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct MtrConfig {
    pub d: usize,
    pub k: usize,
    pub t: usize,
    pub n2: usize,
    pub noise: f64,
    pub n1_list: Vec<usize>,
    pub kappa_list: Vec<f64>,
    /// `n1` used along the conditioning axis.
    pub base_n1: usize,
    /// Planted condition number used along the sample-size axis.
    pub base_kappa: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub seeds: usize,
}

impl Default for MtrConfig {
    fn default() -> Self {
        Self {
            d: 10,
            k: 3,
            t: 20,
            n2: 50,
            noise: 1.0,
            n1_list: vec![5, 20, 80],
            kappa_list: vec![1.0, 10.0, 100.0],
            base_n1: 20,
            base_kappa: 1.0,
            n_mc: 20_000,
            seed: 0,
            seeds: 20,
        }
    }
}

impl Settings for MtrConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_value(key, v)?,
            "k" => self.k = parse_value(key, v)?,
            "T" | "t" => self.t = parse_value(key, v)?,
            "n2" => self.n2 = parse_value(key, v)?,
            "noise" => self.noise = parse_value(key, v)?,
            "n1_list" => self.n1_list = parse_list(key, v)?,
            "kappa_list" => self.kappa_list = parse_list(key, v)?,
            "base_n1" => self.base_n1 = parse_value(key, v)?,
            "base_kappa" => self.base_kappa = parse_value(key, v)?,
            "n_mc" => self.n_mc = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "seeds" => self.seeds = parse_value(key, v)?,
            other => return Err(cfg_err(other, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        positive("d", self.d)?;
        positive("seeds", self.seeds)?;
        positive("n2", self.n2)?;
        if self.k == 0 || self.k > self.d {
            return Err(cfg_err("k", format!("must lie in 1..={}", self.d)));
        }
        if self.t < self.k {
            return Err(cfg_err("T", format!("needs at least k = {} tasks", self.k)));
        }
        for &n1 in self.n1_list.iter().chain([&self.base_n1]) {
            if n1 == 0 || n1 * self.t < self.d {
                return Err(cfg_err(
                    "n1_list",
                    format!("n1 = {n1} gives fewer than d = {} source samples", self.d),
                ));
            }
        }
        if self
            .kappa_list
            .iter()
            .chain([&self.base_kappa])
            .any(|k| !(*k >= 1.0) || !k.is_finite())
        {
            return Err(cfg_err(
                "kappa_list",
                "condition numbers must be finite and >= 1",
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(cfg_err("noise", "must be non-negative"));
        }
        if self.n_mc < 1000 {
            return Err(cfg_err(
                "n_mc",
                "at least 1000 Monte-Carlo samples are required",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        apply_text(
            &mut c,
            "# comment\nmethod = maml\n\nlambda1 = 1\nhidden = 8, 8\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(c.method, Method::Maml);
        assert_eq!(c.hidden, vec![8, 8]);
        c.set("lambda1", "0.5").unwrap();
        assert_eq!(c.lambda1, 0.5);
        assert_eq!(c.encoder_dims(), vec![16, 8, 8, 8]);
    }

    #[test]
    fn unknown_and_invalid_keys_are_named() {
        let mut c = RunConfig::default();
        match c.set("lamda1", "1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lamda1"),
            other => panic!("{other:?}"),
        }
        match c.set("n_way", "five") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "n_way"),
            other => panic!("{other:?}"),
        }
        c.lambda2 = -1.0;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lambda2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let mut c = Prop3Config::default();
        match apply_text(&mut c, "dim = 4\nnonsense\n", Path::new("p.cfg")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        Prop1Config::default().validate().unwrap();
        Prop3Config::default().validate().unwrap();
        MtrConfig::default().validate().unwrap();
    }
}
