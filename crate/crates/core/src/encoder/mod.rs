//! Small differentiable encoder `φ: ℝ^d → ℝ^k`.
//!
//! A stack of affine layers, each followed by the same activation. The
//! parameters live in one flat buffer in layer-major order (weight row-major,
//! then bias), which is also the checkpoint order and the layout the
//! meta-learners differentiate through.

mod optim;
mod scalar;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{fmt_f64, Matrix};

pub use optim::{Optimizer, UpdateRule};
pub use scalar::{Dual, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Real>(self, z: S) -> S {
        match self {
            Activation::Relu => {
                if z.re() > 0.0 {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The relu subgradient at 0 is 0.
    #[inline]
    fn derivative<S: Real>(self, z: S, a: S) -> S {
        match self {
            Activation::Relu => {
                if z.re() > 0.0 {
                    S::cst(1.0)
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::cst(1.0) - a * a,
            Activation::Identity => S::cst(1.0),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config {
                key: "activation".into(),
                msg: format!("unknown activation `{other}` (relu, tanh, identity)"),
            }),
        }
    }
}

/// One affine layer, `out × in` weight plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Encoder parameters. `dims = [d, h_1, …, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dims: Vec<usize>,
    activation: Activation,
    flat: Vec<f64>,
}

/// Parameter count of an encoder with the given layer widths.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "encoder needs at least one layer");
        let mut flat = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                flat.push(rng.random_range(-bound..=bound));
            }
            flat.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            dims: dims.to_vec(),
            activation,
            flat,
        }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("encoder needs at least one layer".into()))?;
        let mut dims = vec![first.weight.cols()];
        let mut flat = Vec::new();
        for (l, layer) in layers.into_iter().enumerate() {
            let (out, inp) = layer.weight.shape();
            if inp != *dims.last().unwrap() || layer.bias.len() != out {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: weight {out}x{inp}, bias {}, expected input {}",
                    layer.bias.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(out);
            flat.extend_from_slice(layer.weight.as_slice());
            flat.extend_from_slice(&layer.bias);
        }
        let p = Self {
            dims,
            activation,
            flat,
        };
        p.check_finite()?;
        Ok(p)
    }

    pub fn from_flat(dims: &[usize], activation: Activation, flat: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "bad encoder dims {dims:?}"
            )));
        }
        if flat.len() != param_count(dims) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for dims {dims:?} (expected {})",
                flat.len(),
                param_count(dims)
            )));
        }
        let p = Self {
            dims: dims.to_vec(),
            activation,
            flat,
        };
        p.check_finite()?;
        Ok(p)
    }

    fn check_finite(&self) -> Result<()> {
        if self.flat.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InputDomain("non-finite encoder parameter".into()))
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.flat.len()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.dims.windows(2) {
            let (inp, o) = (w[0], w[1]);
            let weight = Matrix::from_vec(o, inp, self.flat[off..off + o * inp].to_vec())
                .expect("layout is consistent");
            off += o * inp;
            let bias = self.flat[off..off + o].to_vec();
            off += o;
            out.push(Layer { weight, bias });
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, GradientTape<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for an encoder expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(forward_flat(&self.dims, self.activation, &self.flat, x))
    }

    /// Embedding only, no tape.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(e, _)| e)
    }

    pub fn backward(&self, tape: &GradientTape<f64>, upstream: &[f64]) -> Result<EncoderGrad> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "upstream of length {} for an embedding of {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if tape.inputs.len() != self.dims.len() - 1 || tape.inputs[0].len() != self.input_dim() {
            return Err(Error::DimensionMismatch(
                "tape was recorded with a different encoder".into(),
            ));
        }
        let mut params = vec![0.0; self.flat.len()];
        let input = backward_flat(
            &self.dims,
            self.activation,
            &self.flat,
            tape,
            upstream,
            &mut params,
        );
        Ok(EncoderGrad { params, input })
    }

    /// Flat checkpoint: a 4-line header followed by one value per line.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# spectral-meta encoder checkpoint v1")?;
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "dims {}", dims.join(" "))?;
        writeln!(w, "activation {}", self.activation)?;
        writeln!(w, "params {}", self.flat.len())?;
        for v in &self.flat {
            writeln!(w, "{}", fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<checkpoint>".into(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let mut next = |n: usize| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| bad(n, "unexpected end of checkpoint".into()))
        };
        let magic = next(1)?;
        if !magic.starts_with("# spectral-meta encoder checkpoint") {
            return Err(bad(1, format!("unrecognized header `{magic}`")));
        }
        let dims_line = next(2)?;
        let dims = dims_line
            .strip_prefix("dims ")
            .ok_or_else(|| bad(2, "expected `dims ...`".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| bad(2, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let act_line = next(3)?;
        let activation: Activation = act_line
            .strip_prefix("activation ")
            .ok_or_else(|| bad(3, "expected `activation ...`".into()))?
            .parse()?;
        let count: usize = next(4)?
            .strip_prefix("params ")
            .ok_or_else(|| bad(4, "expected `params N`".into()))?
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(4, e.to_string()))?;
        let mut flat = Vec::with_capacity(count);
        for i in 0..count {
            let line = next(5 + i)?;
            flat.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(5 + i, e.to_string()))?,
            );
        }
        Self::from_flat(&dims, activation, flat)
    }
}

/// Gradients of a scalar readout with respect to the flat parameters and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Per-layer record of the forward pass: layer inputs and pre-activations.
#[derive(Debug, Clone)]
pub struct GradientTape<S> {
    inputs: Vec<Vec<S>>,
    pre: Vec<Vec<S>>,
    outputs: Vec<Vec<S>>,
}

/// Forward pass over a flat parameter slice. Used directly by the dual-number path.
pub(crate) fn forward_flat<S: Real>(
    dims: &[usize],
    activation: Activation,
    params: &[S],
    x: &[S],
) -> (Vec<S>, GradientTape<S>) {
    let layers = dims.len() - 1;
    let mut tape = GradientTape {
        inputs: Vec::with_capacity(layers),
        pre: Vec::with_capacity(layers),
        outputs: Vec::with_capacity(layers),
    };
    let mut h: Vec<S> = x.to_vec();
    let mut off = 0;
    for w in dims.windows(2) {
        let (inp, out) = (w[0], w[1]);
        let weight = &params[off..off + out * inp];
        let bias = &params[off + out * inp..off + out * inp + out];
        off += out * inp + out;
        let mut z = Vec::with_capacity(out);
        for o in 0..out {
            let row = &weight[o * inp..(o + 1) * inp];
            let mut acc = bias[o];
            for (wi, hi) in row.iter().zip(&h) {
                acc += *wi * *hi;
            }
            z.push(acc);
        }
        let a: Vec<S> = z.iter().map(|&v| activation.apply(v)).collect();
        tape.inputs.push(std::mem::replace(&mut h, a.clone()));
        tape.pre.push(z);
        tape.outputs.push(a);
    }
    (h, tape)
}

/// Reverse pass: accumulates parameter gradients into `grad` and returns the input gradient.
pub(crate) fn backward_flat<S: Real>(
    dims: &[usize],
    activation: Activation,
    params: &[S],
    tape: &GradientTape<S>,
    upstream: &[S],
    grad: &mut [S],
) -> Vec<S> {
    let offsets: Vec<usize> = dims
        .windows(2)
        .scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some(start)
        })
        .collect();
    let mut g: Vec<S> = upstream.to_vec();
    for l in (0..dims.len() - 1).rev() {
        let (inp, out) = (dims[l], dims[l + 1]);
        let off = offsets[l];
        let z = &tape.pre[l];
        let a = &tape.outputs[l];
        for o in 0..out {
            g[o] *= activation.derivative(z[o], a[o]);
        }
        let x = &tape.inputs[l];
        for o in 0..out {
            let go = g[o];
            let row = &mut grad[off + o * inp..off + (o + 1) * inp];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += go * *xi;
            }
            grad[off + out * inp + o] += go;
        }
        let weight = &params[off..off + out * inp];
        let mut gin = vec![S::zero(); inp];
        for o in 0..out {
            let go = g[o];
            for (gi, wi) in gin.iter_mut().zip(&weight[o * inp..(o + 1) * inp]) {
                *gi += go * *wi;
            }
        }
        g = gin;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn identity_encoder(n: usize, activation: Activation, sign: f64) -> EncoderParams {
        EncoderParams::from_layers(
            vec![Layer {
                weight: Matrix::identity(n).scale(sign),
                bias: vec![0.0; n],
            }],
            activation,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_is_identity_map() {
        let enc = identity_encoder(3, Activation::Identity, 1.0);
        let x = [0.5, -1.25, 3.0];
        assert_eq!(enc.embed(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn negated_relu_layer_kills_positive_inputs() {
        let enc = identity_encoder(3, Activation::Relu, -1.0);
        assert_eq!(enc.embed(&[0.5, 1.0, 2.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_backward_is_outer_product() {
        let enc = identity_encoder(2, Activation::Identity, 1.0);
        let x = [2.0, -3.0];
        let (_, tape) = enc.forward(&x).unwrap();
        let g = [0.5, 4.0];
        let grad = enc.backward(&tape, &g).unwrap();
        // weight gradient g xᵀ, then bias gradient g
        assert_eq!(grad.params, vec![1.0, -1.5, 8.0, -12.0, 0.5, 4.0]);
        assert_eq!(grad.input, vec![0.5, 4.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let enc = EncoderParams::init(&[4, 5, 3], Activation::Tanh, &mut rng_from_seed(1));
        let (_, tape) = enc.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let grad = enc.backward(&tape, &[0.0; 3]).unwrap();
        assert!(grad.params.iter().all(|&v| v == 0.0));
        assert!(grad.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let enc = EncoderParams::init(&[4, 3], Activation::Tanh, &mut rng_from_seed(1));
        assert!(matches!(
            enc.forward(&[1.0]),
            Err(Error::DimensionMismatch(_))
        ));
        let (_, tape) = enc.forward(&[1.0; 4]).unwrap();
        assert!(enc.backward(&tape, &[1.0; 2]).is_err());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let enc = EncoderParams::init(&[16, 32, 8], Activation::Tanh, &mut rng_from_seed(3));
        let layers = enc.layers();
        let b0 = (6.0f64 / 48.0).sqrt();
        assert!(layers[0].weight.max_abs() <= b0);
        assert!(layers[1].bias.iter().all(|&b| b == 0.0));
        assert_eq!(enc.param_count(), 16 * 32 + 32 + 32 * 8 + 8);
    }

    #[test]
    fn layers_round_trip() {
        let enc = EncoderParams::init(&[3, 4, 2], Activation::Relu, &mut rng_from_seed(9));
        let back = EncoderParams::from_layers(enc.layers(), Activation::Relu).unwrap();
        assert_eq!(enc, back);
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = EncoderParams::init(&[3, 4, 2], Activation::Tanh, &mut rng_from_seed(5));
        let mut buf = Vec::new();
        enc.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4 + enc.param_count());
        let back = EncoderParams::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(enc, back);
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let enc = EncoderParams::init(&[2, 2], Activation::Tanh, &mut rng_from_seed(5));
        let mut buf = Vec::new();
        enc.write_checkpoint(&mut buf).unwrap();
        buf.truncate(buf.len() - 10);
        let text = String::from_utf8_lossy(&buf).to_string();
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(EncoderParams::read_checkpoint(cut.as_bytes()).is_err());
    }
}
