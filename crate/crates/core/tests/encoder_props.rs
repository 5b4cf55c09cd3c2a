use proptest::prelude::*;

use spectral_meta::config::RunConfig;
use spectral_meta::encoder::{param_count, Activation, EncoderParams};
use spectral_meta::experiments::train_seed;
use spectral_meta::oracle::{self, FdConfig};
use spectral_meta::rng::{normal_vec, rng_from_seed};

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::Identity)
    ]
}

/// Smallest |pre-activation| over all layers, where relu has its kink.
fn closest_to_kink(enc: &EncoderParams, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut closest = f64::INFINITY;
    for layer in &enc.layers() {
        let z: Vec<f64> = layer
            .weight
            .matvec(&h)
            .into_iter()
            .zip(&layer.bias)
            .map(|(a, b)| a + b)
            .collect();
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        h = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    closest
}

fn readout(enc: &EncoderParams, x: &[f64], up: &[f64]) -> f64 {
    enc.embed(x)
        .unwrap()
        .iter()
        .zip(up)
        .map(|(a, b)| a * b)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn backward_matches_finite_differences(
        act in activation(),
        hidden in 1..6usize,
        two_layers in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let dims = if two_layers { vec![4, hidden, 3] } else { vec![4, 3] };
        let mut rng = rng_from_seed(seed);
        let flat = normal_vec(&mut rng, param_count(&dims));
        let x = normal_vec(&mut rng, 4);
        let up = normal_vec(&mut rng, 3);
        let enc = EncoderParams::from_flat(&dims, act, flat.clone()).unwrap();
        if act == Activation::Relu {
            prop_assume!(closest_to_kink(&enc, &x) > 1e-3);
        }
        let (_, tape) = enc.forward(&x).unwrap();
        let g = enc.backward(&tape, &up).unwrap();

        let fd_params = oracle::fd_gradient_vec(
            |p| readout(&EncoderParams::from_flat(&dims, act, p.to_vec()).unwrap(), &x, &up),
            &flat,
            FdConfig::LOSS,
        ).unwrap();
        prop_assert!(oracle::max_relative_error(&g.params, &fd_params, 1e-12) <= 1e-5);

        let fd_input = oracle::fd_gradient_vec(|xi| readout(&enc, xi, &up), &x, FdConfig::LOSS).unwrap();
        prop_assert!(oracle::max_relative_error(&g.input, &fd_input, 1e-12) <= 1e-5);
    }

    #[test]
    fn single_identity_layer_is_matrix_vector_product(d in 1..8usize, k in 1..8usize, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let mut flat = normal_vec(&mut rng, d * k);
        flat.extend(std::iter::repeat_n(0.0, k));
        let enc = EncoderParams::from_flat(&[d, k], Activation::Identity, flat).unwrap();
        let x = normal_vec(&mut rng, d);
        let expected = enc.layers()[0].weight.matvec(&x);
        prop_assert_eq!(enc.embed(&x).unwrap(), expected);
    }

    #[test]
    fn forward_matches_straight_line_oracle(act in activation(), seed in any::<u64>()) {
        let dims = [5, 7, 6, 3];
        let mut rng = rng_from_seed(seed);
        let enc = EncoderParams::init(&dims, act, &mut rng);
        let x = normal_vec(&mut rng, 5);
        let layers: Vec<(Vec<Vec<f64>>, Vec<f64>)> = enc
            .layers()
            .into_iter()
            .map(|l| ((0..l.weight.rows()).map(|i| l.weight.row(i).to_vec()).collect(), l.bias))
            .collect();
        let f: fn(f64) -> f64 = match act {
            Activation::Relu => |v| v.max(0.0),
            Activation::Tanh => f64::tanh,
            Activation::Identity => |v| v,
        };
        let reference = oracle::mlp_forward(&layers, f, &x);
        for (a, b) in enc.embed(&x).unwrap().iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let cfg = RunConfig {
        episodes: 30,
        eval_episodes: 5,
        global_kappa_samples: 10,
        ..RunConfig::default()
    };
    let dump = |seed| {
        let run = train_seed(&cfg, seed).unwrap();
        let mut buf = Vec::new();
        match &run.model {
            spectral_meta::diagnostics::FrozenModel::ProtoNet { encoder, .. } => {
                encoder.write_checkpoint(&mut buf).unwrap()
            }
            _ => panic!("expected a ProtoNet model"),
        }
        buf
    };
    assert_eq!(dump(3), dump(3));
    assert_ne!(dump(3), dump(4));
}
