use super::Check;
use crate::encoder::{Activation, EncoderParams};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::maml::{
    inner_adapt, outer_gradient, MamlConfig, MetaObjective, MetaTask, ModelParams, Order,
};
use crate::oracle::{fd_gradient, fd_gradient_vec, FdConfig};
use crate::protonet::proto_loss;
use crate::regularizers::{entropy_penalty, spectral_penalty, total_penalty, PenaltyConfig};
use crate::rng::{normal_vec, rng_from_seed};
use crate::tasks::{ClassSource, Episode, EpisodeShape, GaussianFamily};

/// Largest accepted relative error between analytic and finite-difference gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    /// `max_i |g_i − fd_i| / max_i |fd_i|`.
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn check(&self) -> Check {
        Check::new(
            format!("gradient_{}", self.name),
            self.max_rel_error <= GRADCHECK_TOLERANCE,
            format!("max relative error {:.3e}", self.max_rel_error),
        )
    }
}

fn rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn fixture_episode(seed: u64) -> Result<Episode> {
    let fam = GaussianFamily::new(4, 2.0, 1.0, 6, &mut rng_from_seed(seed))?;
    fam.sample_episode(EpisodeShape::new(3, 2, 2), &mut rng_from_seed(seed + 1))
}

fn penalty_fixture() -> PenaltyConfig {
    PenaltyConfig {
        lambda1: 1.0,
        lambda2: 0.5,
        lambda_entropy: 0.3,
        sigma_floor: 1e-8,
    }
}

fn check_proto(normalize: bool) -> Result<f64> {
    let ep = fixture_episode(11)?;
    let enc = EncoderParams::init(&[4, 6, 3], Activation::Tanh, &mut rng_from_seed(12));
    let pen = penalty_fixture();
    let analytic = proto_loss(&ep, &enc, normalize, &pen)?.grad;
    let dims = enc.dims().to_vec();
    let fd = fd_gradient_vec(
        |p| {
            let e = EncoderParams::from_flat(&dims, Activation::Tanh, p.to_vec()).expect("shape");
            proto_loss(&ep, &e, normalize, &pen).map_or(f64::NAN, |l| l.loss)
        },
        enc.as_flat(),
        FdConfig::LOSS,
    )?;
    Ok(rel_error(&analytic, &fd))
}

fn check_maml() -> Result<f64> {
    let mut rng = rng_from_seed(21);
    let mut model = ModelParams::init(&[4, 5, 3], Activation::Tanh, 3, &mut rng);
    model.head = Matrix::from_vec(3, 3, normal_vec(&mut rng, 9))?;
    model.bias = normal_vec(&mut rng, 3);
    let obj = model.objective();
    let tasks: Vec<MetaTask<_>> = [31, 41]
        .into_iter()
        .map(|s| {
            fixture_episode(s).map(|ep| MetaTask {
                support: ep.support,
                query: ep.query,
            })
        })
        .collect::<Result<_>>()?;
    let cfg = MamlConfig {
        alpha: 0.3,
        inner_steps: 2,
        order: Order::Second,
        penalty: PenaltyConfig {
            lambda_entropy: 0.0,
            ..penalty_fixture()
        },
    };
    let layout = obj.predictor_layout().expect("head");
    let scalar = |p: &[f64]| -> Result<f64> {
        let mut loss = 0.0;
        let mut heads = Vec::new();
        for t in &tasks {
            let a = inner_adapt(&obj, p, &t.support, cfg.inner_steps, cfg.alpha)?;
            loss += obj.evaluate(&a, &t.query)?.loss / tasks.len() as f64;
            heads.push(layout.extract(&a));
        }
        Ok(loss + total_penalty(&Matrix::vstack(&heads)?, &cfg.penalty)?.value)
    };
    let flat = model.to_flat();
    let analytic = outer_gradient(&obj, &flat, &tasks, &cfg)?.grad;
    let fd = fd_gradient_vec(|p| scalar(p).unwrap_or(f64::NAN), &flat, FdConfig::LOSS)?;
    Ok(rel_error(&analytic, &fd))
}

fn random_matrix(seed: u64, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, normal_vec(&mut rng_from_seed(seed), r * c)).expect("shape")
}

fn check_spectral() -> Result<f64> {
    let w = random_matrix(51, 4, 3);
    let cfg = PenaltyConfig {
        lambda1: 1.0,
        lambda2: 0.5,
        lambda_entropy: 0.0,
        sigma_floor: 1e-8,
    };
    let analytic = spectral_penalty(&w, &cfg)?.grad;
    let fd = fd_gradient(
        |m| spectral_penalty(m, &cfg).map_or(f64::NAN, |p| p.value),
        &w,
        FdConfig::SPECTRAL,
    )?;
    Ok(rel_error(analytic.as_slice(), fd.as_slice()))
}

fn check_entropy() -> Result<f64> {
    let w = random_matrix(61, 5, 3);
    let analytic = entropy_penalty(&w, 1.0)?.grad;
    let fd = fd_gradient(
        |m| entropy_penalty(m, 1.0).map_or(f64::NAN, |p| p.value),
        &w,
        FdConfig::SPECTRAL,
    )?;
    Ok(rel_error(analytic.as_slice(), fd.as_slice()))
}

fn check_encoder(activation: Activation) -> Result<f64> {
    let dims = [5, 7, 6, 3];
    let enc = EncoderParams::init(&dims, activation, &mut rng_from_seed(71));
    let x = normal_vec(&mut rng_from_seed(72), 5);
    let u = normal_vec(&mut rng_from_seed(73), 3);
    let readout = |e: &[f64]| e.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    let (_, tape) = enc.forward(&x)?;
    let g = enc.backward(&tape, &u)?;
    let fd_p = fd_gradient_vec(
        |p| {
            let e = EncoderParams::from_flat(&dims, activation, p.to_vec()).expect("shape");
            readout(&e.embed(&x).expect("dims"))
        },
        enc.as_flat(),
        FdConfig::LOSS,
    )?;
    let fd_x = fd_gradient_vec(
        |xx| readout(&enc.embed(xx).expect("dims")),
        &x,
        FdConfig::LOSS,
    )?;
    Ok(rel_error(&g.params, &fd_p).max(rel_error(&g.input, &fd_x)))
}

/// Runs every analytic-versus-finite-difference comparison.
pub fn gradcheck_suite() -> Result<Vec<GradCheck>> {
    Ok(vec![
        GradCheck {
            name: "proto_loss",
            max_rel_error: check_proto(false)?,
        },
        GradCheck {
            name: "proto_loss_normalized",
            max_rel_error: check_proto(true)?,
        },
        GradCheck {
            name: "maml_second_order",
            max_rel_error: check_maml()?,
        },
        GradCheck {
            name: "spectral_penalty",
            max_rel_error: check_spectral()?,
        },
        GradCheck {
            name: "entropy_penalty",
            max_rel_error: check_entropy()?,
        },
        GradCheck {
            name: "encoder_tanh",
            max_rel_error: check_encoder(Activation::Tanh)?,
        },
        GradCheck {
            name: "encoder_identity",
            max_rel_error: check_encoder(Activation::Identity)?,
        },
    ])
}
