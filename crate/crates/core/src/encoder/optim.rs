use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl UpdateRule {
    pub fn adam(lr: f64) -> Self {
        UpdateRule::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: UpdateRule,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, len: usize) -> Self {
        let moments = matches!(rule, UpdateRule::Adam { .. });
        Self {
            rule,
            step: 0,
            m: if moments { vec![0.0; len] } else { Vec::new() },
            v: if moments { vec![0.0; len] } else { Vec::new() },
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, {} gradient entries",
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        match self.rule {
            UpdateRule::Sgd { lr } => {
                if lr != 0.0 {
                    for (p, g) in params.iter_mut().zip(grad) {
                        *p -= lr * g;
                    }
                }
            }
            UpdateRule::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.len() != params.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "optimizer state for {} parameters, got {}",
                        self.m.len(),
                        params.len()
                    )));
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    if lr != 0.0 {
                        let mhat = self.m[i] / c1;
                        let vhat = self.v[i] / c2;
                        params[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
