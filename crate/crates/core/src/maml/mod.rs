//! Model-agnostic meta-learning over a flat parameter vector.
//!
//! An objective supplies a loss, its gradient and Hessian-vector products on
//! a data set. The inner loop is plain gradient descent on the support set.
//! The outer gradient is obtained by pulling the query gradient back through
//! the inner trajectory, `v ← (I − α H(θ_j)) v` for `j = s−1, …, 0`, when the
//! order is second; the first-order variant skips the pull-back.

mod classifier;
mod linear;

use crate::encoder::{Optimizer, UpdateRule};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, frobenius_norm, Kappa, Matrix};
use crate::regularizers::{total_penalty, PenaltyConfig};

pub use classifier::{ClassifierObjective, ModelParams};
pub use linear::{
    linear_recurrence, simulate_prop1, LinearRegressionObjective, Prop1Step, Prop1Trace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl std::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Order::First),
            "second" => Ok(Order::Second),
            other => Err(Error::Config {
                key: "order".into(),
                msg: format!("unknown order `{other}` (first, second)"),
            }),
        }
    }
}

impl std::fmt::Display for Order {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Order::First => "first",
            Order::Second => "second",
        })
    }
}

/// Loss value, gradient and optional accuracy on one data set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub accuracy: Option<f64>,
}

/// Location of the linear predictor rows inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorLayout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PredictorLayout {
    pub fn extract(&self, params: &[f64]) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            params[self.offset..self.offset + self.rows * self.cols].to_vec(),
        )
        .expect("layout matches parameter count")
    }
}

pub trait MetaObjective: Sync {
    type Data: Sync;

    fn param_count(&self) -> usize;

    fn evaluate(&self, params: &[f64], data: &Self::Data) -> Result<Evaluation>;

    /// `∇²L(params) · v`.
    fn hvp(&self, params: &[f64], data: &Self::Data, v: &[f64]) -> Result<Vec<f64>>;

    /// Linear-predictor rows, when the model has a linear head.
    fn predictor_layout(&self) -> Option<PredictorLayout> {
        None
    }
}

/// A support/query pair.
#[derive(Debug, Clone)]
pub struct MetaTask<D> {
    pub support: D,
    pub query: D,
}

fn check_len(expected: usize, params: &[f64]) -> Result<()> {
    if params.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, objective expects {expected}",
            params.len()
        )));
    }
    Ok(())
}

/// Parameters after each inner step: `θ_0 = params, …, θ_steps`.
pub fn inner_trajectory<O: MetaObjective>(
    obj: &O,
    params: &[f64],
    support: &O::Data,
    steps: usize,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    check_len(obj.param_count(), params)?;
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(params.to_vec());
    for _ in 0..steps {
        let cur = traj.last().expect("nonempty");
        let mut next = cur.clone();
        if alpha != 0.0 {
            let g = obj.evaluate(cur, support)?.grad;
            for (p, g) in next.iter_mut().zip(g) {
                *p -= alpha * g;
            }
        }
        traj.push(next);
    }
    Ok(traj)
}

/// `steps` full-batch gradient steps of size `alpha` on the support set.
pub fn inner_adapt<O: MetaObjective>(
    obj: &O,
    params: &[f64],
    support: &O::Data,
    steps: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    Ok(inner_trajectory(obj, params, support, steps, alpha)?
        .pop()
        .expect("nonempty"))
}

/// Mean query loss after adaptation; the quantity the outer loop minimizes.
pub fn maml_objective<O: MetaObjective>(
    obj: &O,
    params: &[f64],
    tasks: &[MetaTask<O::Data>],
    steps: usize,
    alpha: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for t in tasks {
        let adapted = inner_adapt(obj, params, &t.support, steps, alpha)?;
        total += obj.evaluate(&adapted, &t.query)?.loss;
    }
    Ok(total / tasks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MamlConfig {
    pub alpha: f64,
    pub inner_steps: usize,
    pub order: Order,
    pub penalty: PenaltyConfig,
}

/// Outer gradient of one batch together with what was measured on the way.
#[derive(Debug, Clone)]
pub struct OuterGradient {
    pub grad: Vec<f64>,
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
    pub penalty: f64,
    /// Adapted predictor rows of the batch, stacked episode by episode.
    pub w_n: Option<Matrix>,
}

pub fn outer_gradient<O: MetaObjective>(
    obj: &O,
    params: &[f64],
    tasks: &[MetaTask<O::Data>],
    cfg: &MamlConfig,
) -> Result<OuterGradient> {
    if tasks.is_empty() {
        return Err(Error::InvalidShape("empty meta-batch".into()));
    }
    check_len(obj.param_count(), params)?;
    let b = tasks.len() as f64;
    let mut trajectories = Vec::with_capacity(tasks.len());
    let mut upstream = Vec::with_capacity(tasks.len());
    let mut query_loss = 0.0;
    let mut acc_sum = 0.0;
    let mut acc_seen = true;
    for t in tasks {
        let traj = inner_trajectory(obj, params, &t.support, cfg.inner_steps, cfg.alpha)?;
        let eval = obj.evaluate(traj.last().expect("nonempty"), &t.query)?;
        query_loss += eval.loss / b;
        match eval.accuracy {
            Some(a) => acc_sum += a / b,
            None => acc_seen = false,
        }
        upstream.push(eval.grad.into_iter().map(|g| g / b).collect::<Vec<f64>>());
        trajectories.push(traj);
    }

    let layout = obj.predictor_layout();
    let w_n = match layout {
        Some(l) => Some(Matrix::vstack(
            &trajectories
                .iter()
                .map(|t| l.extract(t.last().expect("nonempty")))
                .collect::<Vec<_>>(),
        )?),
        None => None,
    };

    let mut penalty = 0.0;
    if cfg.penalty.is_active() {
        if let (Some(l), Some(w)) = (layout, &w_n) {
            let pen = total_penalty(w, &cfg.penalty)?;
            penalty = pen.value;
            let block = l.rows * l.cols;
            for (e, up) in upstream.iter_mut().enumerate() {
                let g = &pen.grad.as_slice()[e * block..(e + 1) * block];
                for (u, gv) in up[l.offset..l.offset + block].iter_mut().zip(g) {
                    *u += gv;
                }
            }
        }
    }

    let mut grad = vec![0.0; params.len()];
    for ((t, traj), mut v) in tasks.iter().zip(&trajectories).zip(upstream) {
        if cfg.order == Order::Second && cfg.alpha != 0.0 {
            for theta in traj[..cfg.inner_steps].iter().rev() {
                let hv = obj.hvp(theta, &t.support, &v)?;
                for (vi, h) in v.iter_mut().zip(hv) {
                    *vi -= cfg.alpha * h;
                }
            }
        }
        for (g, vi) in grad.iter_mut().zip(v) {
            *g += vi;
        }
    }

    Ok(OuterGradient {
        grad,
        query_loss,
        query_accuracy: acc_seen.then_some(acc_sum),
        penalty,
        w_n,
    })
}

/// Per-step measurements of the outer loop.
#[derive(Debug, Clone)]
pub struct OuterMetrics {
    pub query_loss: f64,
    pub query_accuracy: Option<f64>,
    pub penalty: f64,
    pub kappa_wn: Option<Kappa>,
    pub frob_wn: Option<f64>,
    pub w_n: Option<Matrix>,
}

/// Outer-loop state: meta-parameters plus optimizer moments.
#[derive(Debug, Clone)]
pub struct MamlLearner {
    pub params: Vec<f64>,
    pub config: MamlConfig,
    optimizer: Optimizer,
}

impl MamlLearner {
    pub fn new(params: Vec<f64>, config: MamlConfig, rule: UpdateRule) -> Self {
        let optimizer = Optimizer::new(rule, params.len());
        Self {
            params,
            config,
            optimizer,
        }
    }

    pub fn outer_step<O: MetaObjective>(
        &mut self,
        obj: &O,
        tasks: &[MetaTask<O::Data>],
    ) -> Result<OuterMetrics> {
        let out = outer_gradient(obj, &self.params, tasks, &self.config)?;
        let (kappa_wn, frob_wn) = match &out.w_n {
            Some(w) => {
                let k = w.rows().min(w.cols());
                (Some(condition_number(w, k)?), Some(frobenius_norm(w)))
            }
            None => (None, None),
        };
        self.optimizer.apply(&mut self.params, &out.grad)?;
        Ok(OuterMetrics {
            query_loss: out.query_loss,
            query_accuracy: out.query_accuracy,
            penalty: out.penalty,
            kappa_wn,
            frob_wn,
            w_n: out.w_n,
        })
    }
}
