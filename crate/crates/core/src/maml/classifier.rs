use rand::Rng;

use super::{Evaluation, MetaObjective, PredictorLayout};
use crate::encoder::{backward_flat, forward_flat, Activation, Dual, EncoderParams, Real};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tasks::Example;

/// Encoder followed by a linear head with bias, trained with softmax
/// cross-entropy. Flat layout: encoder parameters, head rows, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierObjective {
    dims: Vec<usize>,
    activation: Activation,
    n_way: usize,
    encoder_len: usize,
}

impl ClassifierObjective {
    pub fn new(dims: &[usize], activation: Activation, n_way: usize) -> Self {
        Self {
            dims: dims.to_vec(),
            activation,
            n_way,
            encoder_len: crate::encoder::param_count(dims),
        }
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    fn embed_dim(&self) -> usize {
        *self.dims.last().expect("nonempty dims")
    }

    fn run<S: Real>(&self, params: &[S], data: &[Example]) -> Result<(S, Vec<S>, usize)> {
        if data.is_empty() {
            return Err(Error::InvalidShape("empty data set".into()));
        }
        let (pe, k, c) = (self.encoder_len, self.embed_dim(), self.n_way);
        let enc = &params[..pe];
        let head = &params[pe..pe + c * k];
        let bias = &params[pe + c * k..];
        let n = S::cst(data.len() as f64);
        let mut grad = vec![S::zero(); params.len()];
        let mut loss = S::zero();
        let mut correct = 0;
        for ex in data {
            if ex.x.len() != self.dims[0] || ex.label >= c {
                return Err(Error::DimensionMismatch(format!(
                    "example of length {} with label {} for a {}-input, {c}-way model",
                    ex.x.len(),
                    ex.label,
                    self.dims[0]
                )));
            }
            let x: Vec<S> = ex.x.iter().map(|&v| S::cst(v)).collect();
            let (emb, tape) = forward_flat(&self.dims, self.activation, enc, &x);
            let logits: Vec<S> = (0..c)
                .map(|r| {
                    let mut acc = bias[r];
                    for j in 0..k {
                        acc += head[r * k + j] * emb[j];
                    }
                    acc
                })
                .collect();
            let best = (0..c)
                .max_by(|&a, &b| logits[a].re().total_cmp(&logits[b].re()).then(b.cmp(&a)))
                .expect("n_way > 0");
            correct += usize::from(best == ex.label);
            let top = S::cst(logits[best].re());
            let exps: Vec<S> = logits.iter().map(|&l| (l - top).exp()).collect();
            let mut z = S::zero();
            for &e in &exps {
                z += e;
            }
            loss += z.ln() - (logits[ex.label] - top);
            let mut dphi = vec![S::zero(); k];
            for r in 0..c {
                let p = exps[r] / z;
                let d = (if r == ex.label { p - S::cst(1.0) } else { p }) / n;
                for j in 0..k {
                    grad[pe + r * k + j] += d * emb[j];
                    dphi[j] += d * head[r * k + j];
                }
                grad[pe + c * k + r] += d;
            }
            backward_flat(
                &self.dims,
                self.activation,
                enc,
                &tape,
                &dphi,
                &mut grad[..pe],
            );
        }
        Ok((loss / n, grad, correct))
    }
}

impl MetaObjective for ClassifierObjective {
    type Data = Vec<Example>;

    fn param_count(&self) -> usize {
        self.encoder_len + self.n_way * (self.embed_dim() + 1)
    }

    fn evaluate(&self, params: &[f64], data: &Vec<Example>) -> Result<Evaluation> {
        super::check_len(self.param_count(), params)?;
        let (loss, grad, correct) = self.run(params, data)?;
        Ok(Evaluation {
            loss,
            grad,
            accuracy: Some(correct as f64 / data.len() as f64),
        })
    }

    fn hvp(&self, params: &[f64], data: &Vec<Example>, v: &[f64]) -> Result<Vec<f64>> {
        super::check_len(self.param_count(), params)?;
        super::check_len(self.param_count(), v)?;
        let dual: Vec<Dual> = params
            .iter()
            .zip(v)
            .map(|(&p, &t)| Dual::new(p, t))
            .collect();
        let (_, grad, _) = self.run(&dual, data)?;
        Ok(grad.into_iter().map(|g| g.eps).collect())
    }

    fn predictor_layout(&self) -> Option<PredictorLayout> {
        Some(PredictorLayout {
            offset: self.encoder_len,
            rows: self.n_way,
            cols: self.embed_dim(),
        })
    }
}

/// Meta-parameters of the classifier: encoder, head rows and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: Matrix,
    pub bias: Vec<f64>,
}

impl ModelParams {
    /// Glorot encoder, zero head and bias.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        n_way: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::init(dims, activation, rng);
        let k = encoder.output_dim();
        Self {
            encoder,
            head: Matrix::zeros(n_way, k),
            bias: vec![0.0; n_way],
        }
    }

    pub fn objective(&self) -> ClassifierObjective {
        ClassifierObjective::new(
            self.encoder.dims(),
            self.encoder.activation(),
            self.head.rows(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.encoder.as_flat().to_vec();
        v.extend_from_slice(self.head.as_slice());
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn from_flat(obj: &ClassifierObjective, flat: &[f64]) -> Result<Self> {
        super::check_len(obj.param_count(), flat)?;
        let (pe, k, c) = (obj.encoder_len, obj.embed_dim(), obj.n_way);
        Ok(Self {
            encoder: EncoderParams::from_flat(&obj.dims, obj.activation, flat[..pe].to_vec())?,
            head: Matrix::from_vec(c, k, flat[pe..pe + c * k].to_vec())?,
            bias: flat[pe + c * k..].to_vec(),
        })
    }

    /// Adapted copy after `steps` gradient steps on `support`; `self` is untouched.
    pub fn inner_adapt(&self, support: &Vec<Example>, steps: usize, alpha: f64) -> Result<Self> {
        let obj = self.objective();
        let flat = super::inner_adapt(&obj, &self.to_flat(), support, steps, alpha)?;
        Self::from_flat(&obj, &flat)
    }

    /// Head matrix with the bias appended as a last column.
    pub fn head_with_bias(&self) -> Matrix {
        let (c, k) = self.head.shape();
        Matrix::from_fn(c, k + 1, |i, j| {
            if j < k {
                self.head[(i, j)]
            } else {
                self.bias[i]
            }
        })
    }

    pub fn from_parts(encoder: EncoderParams, head_with_bias: &Matrix) -> Result<Self> {
        let (c, kk) = head_with_bias.shape();
        if kk != encoder.output_dim() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "head has {kk} columns, encoder output is {}",
                encoder.output_dim()
            )));
        }
        let k = kk - 1;
        Ok(Self {
            encoder,
            head: Matrix::from_fn(c, k, |i, j| head_with_bias[(i, j)]),
            bias: (0..c).map(|i| head_with_bias[(i, k)]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn data() -> Vec<Example> {
        vec![
            Example {
                x: vec![0.5, -1.0, 2.0],
                label: 0,
            },
            Example {
                x: vec![-0.3, 0.7, 0.1],
                label: 1,
            },
            Example {
                x: vec![1.2, 0.4, -0.8],
                label: 1,
            },
        ]
    }

    #[test]
    fn zero_head_gives_uniform_loss() {
        let m = ModelParams::init(&[3, 4], Activation::Tanh, 2, &mut rng_from_seed(1));
        let ev = m.objective().evaluate(&m.to_flat(), &data()).unwrap();
        assert!((ev.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn flat_round_trip() {
        let mut m = ModelParams::init(&[3, 5, 2], Activation::Relu, 3, &mut rng_from_seed(2));
        m.head = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        m.bias = vec![0.1, 0.2, 0.3];
        let back = ModelParams::from_flat(&m.objective(), &m.to_flat()).unwrap();
        assert_eq!(m, back);
        let parts = ModelParams::from_parts(m.encoder.clone(), &m.head_with_bias()).unwrap();
        assert_eq!(m, parts);
    }

    #[test]
    fn hvp_matches_gradient_differences() {
        let mut m = ModelParams::init(&[3, 4, 2], Activation::Tanh, 2, &mut rng_from_seed(3));
        m.head = Matrix::from_rows(&[[0.3, -0.2], [0.1, 0.5]]);
        let obj = m.objective();
        let p = m.to_flat();
        let v: Vec<f64> = (0..p.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let hv = obj.hvp(&p, &data(), &v).unwrap();
        let h = 1e-6;
        let shifted = |s: f64| {
            let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            obj.evaluate(&q, &data()).unwrap().grad
        };
        let (gp, gm) = (shifted(h), shifted(-h));
        let scale = hv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..p.len() {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!(
                (fd - hv[i]).abs() <= 1e-6 * scale.max(1.0),
                "{i}: {fd} vs {}",
                hv[i]
            );
        }
    }

    #[test]
    fn adaptation_is_value_semantics() {
        let m = ModelParams::init(&[3, 4], Activation::Tanh, 2, &mut rng_from_seed(4));
        let before = m.clone();
        let a = m.inner_adapt(&data(), 3, 0.5).unwrap();
        assert_eq!(m, before);
        assert_ne!(a, m);
        assert_eq!(m.inner_adapt(&data(), 3, 0.0).unwrap(), m);
    }
}
