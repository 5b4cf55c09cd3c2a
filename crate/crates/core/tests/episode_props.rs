use proptest::prelude::*;

use spectral_meta::config::RunConfig;
use spectral_meta::rng::{rng_from_seed, split_seed};
use spectral_meta::tasks::{build_prop3, ClassSource, Episode, EpisodeShape, GaussianFamily};

fn assert_balanced(ep: &Episode) {
    ep.validate().unwrap();
    assert_eq!(ep.support.len(), ep.n_way * ep.k_shot);
    assert_eq!(ep.query.len(), ep.n_way * ep.n_query);
    for c in 0..ep.n_way {
        assert_eq!(ep.support.iter().filter(|e| e.label == c).count(), ep.k_shot);
        assert_eq!(ep.query.iter().filter(|e| e.label == c).count(), ep.n_query);
    }
    assert!(ep.support.iter().chain(&ep.query).all(|e| e.label < ep.n_way));
}

#[test]
fn thousand_episodes_are_balanced_and_disjoint() {
    let mut rng = rng_from_seed(11);
    let family = GaussianFamily::new(6, 4.0, 1.0, 12, &mut rng).unwrap();
    let pool = family.materialize(8, &mut rng).unwrap();
    let shapes = [
        EpisodeShape::new(5, 1, 5),
        EpisodeShape::new(3, 2, 6),
        EpisodeShape::new(12, 4, 4),
    ];
    for i in 0..1000u64 {
        let shape = shapes[i as usize % shapes.len()];
        let mut r = rng_from_seed(split_seed(5, i));
        let ep = pool.sample_episode(shape, &mut r).unwrap();
        assert_balanced(&ep);
        // Points of a finite pool are distinct, so a repeated vector means a reused index.
        let mut seen: Vec<&Vec<f64>> = ep.support.iter().chain(&ep.query).map(|e| &e.x).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(seen.windows(2).all(|w| w[0] != w[1]), "episode {i} reuses a point");

        let fresh = family.sample_episode(shape, &mut r).unwrap();
        assert_balanced(&fresh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episode_is_a_function_of_its_seed(run_seed in any::<u64>(), i in 0..10_000u64) {
        let cfg = RunConfig::default();
        let setup = spectral_meta::experiments::Setup::new(&cfg, run_seed).unwrap();
        let s = split_seed(run_seed, i);
        let a = setup.train_episode(s).unwrap();
        let b = setup.train_episode(s).unwrap();
        prop_assert_eq!(&a, &b);
        let other = setup.train_episode(split_seed(run_seed, i + 1)).unwrap();
        prop_assert_ne!(&a, &other);
    }

    #[test]
    fn eval_classes_never_reach_training_episodes(run_seed in any::<u64>(), i in any::<u64>()) {
        let cfg = RunConfig::default();
        let setup = spectral_meta::experiments::Setup::new(&cfg, run_seed).unwrap();
        prop_assert!(setup.train_classes.iter().all(|c| !setup.eval_classes.contains(c)));
        prop_assert_eq!(setup.train_classes.len() + setup.eval_classes.len(), cfg.class_pool);
        let ep = setup.eval_episode(i).unwrap();
        assert_balanced(&ep);
    }

    #[test]
    fn dyadic_epsilon_factorizations_are_exact(j in 1..=20i32, dim in 3..8usize) {
        let eps = 2f64.powi(-j);
        let c = build_prop3(eps, dim, 2.0, true).unwrap();
        prop_assert!(c.residuals_star().iter().all(|&r| r == 0.0));
        prop_assert!(c.residuals_hat().iter().all(|&r| r == 0.0));
        let v = build_prop3(eps, dim, 2.0, false).unwrap();
        prop_assert!(v.residuals_hat().iter().all(|&r| r == 0.0));
    }
}
