use dppdyn::cli::ExperimentConfig;
use dppdyn::papangelou::{self, CheckMode, PapangelouEngine};
use dppdyn::rates::{self, g_t, RateModel, RateSpec, Rates};
use dppdyn::simulate::{self, EventKind};
use dppdyn::{fixtures, Configuration, Kernel};
use proptest::prelude::*;

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    (
        3usize..=7,
        0.05f64..0.6,
        0.05f64..0.5,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(n, spread, margin, seed, complex)| {
            if complex {
                fixtures::random_complex_dominant(n, spread, margin, seed)
            } else {
                fixtures::random_dominant(n, spread, margin, seed)
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn glauber_rates_sum_to_one(alpha in 1e-6f64..1e6) {
        let b = Rates::Glauber.birth(0, alpha);
        let d = Rates::Glauber.death(0, alpha);
        prop_assert_eq!(b + d, 1.0);
        prop_assert!((b - alpha * d).abs() <= 1e-12 * alpha.max(1.0));
    }

    #[test]
    fn g_t_is_symmetric(t in 0.0f64..=1.0, u in 0.0f64..50.0, v in 0.0f64..50.0) {
        prop_assert_eq!(g_t(t, u, v), g_t(t, v, u));
        prop_assert!(g_t(t, u, v) <= 1.0);
    }

    #[test]
    fn detailed_balance_on_random_kernels(k in kernel_strategy(), t in 0.0f64..=1.0) {
        let spec = RateSpec::nearest_neighbor(k.space(), t).unwrap();
        for m in [Rates::Glauber, Rates::Kawasaki(spec)] {
            let rep = rates::detailed_balance_residual(&k, &m, Some(CheckMode::Exhaustive)).unwrap();
            prop_assert!(rep.max_residual < 1e-12 * k.op_norm());
        }
    }

    #[test]
    fn alpha_decreases_along_inclusion(k in kernel_strategy(), mask in any::<u64>(), extra in any::<u64>()) {
        let n = k.n_sites();
        let full = (1u64 << n) - 1;
        let small = Configuration::from_mask(n, mask & full);
        let large = Configuration::from_mask(n, (mask | extra) & full);
        for x in large.holes() {
            let a_small = papangelou::alpha(&k, x, &small).unwrap();
            let a_large = papangelou::alpha(&k, x, &large).unwrap();
            prop_assert!(a_large <= a_small * (1.0 + 1e-12));
            prop_assert!(a_large >= k.lambda_margin() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn engine_matches_scratch(k in kernel_strategy(), moves in proptest::collection::vec((any::<bool>(), 0usize..64), 1..40)) {
        let n = k.n_sites();
        let mut xi = Configuration::empty(n);
        let mut engine = PapangelouEngine::new(&k, &xi).unwrap();
        for (add, site) in moves {
            let x = site % n;
            if add && !xi.contains(x) {
                engine.add(x).unwrap();
                xi.insert(x).unwrap();
            } else if !add && xi.contains(x) {
                engine.remove(x).unwrap();
                xi.remove(x).unwrap();
            }
        }
        for y in xi.holes() {
            let scratch = papangelou::alpha(&k, y, &xi).unwrap();
            prop_assert!((engine.alpha(y).unwrap() - scratch).abs() <= 1e-10 * scratch);
        }
        for x in xi.iter() {
            let scratch = papangelou::alpha(&k, x, &xi.without(x).unwrap()).unwrap();
            prop_assert!((engine.alpha_removed(x).unwrap() - scratch).abs() <= 1e-10 * scratch);
        }
    }

    #[test]
    fn scratch_rates_keep_particle_number(k in kernel_strategy(), mask in any::<u64>(), t in 0.0f64..=1.0) {
        let n = k.n_sites();
        let xi = Configuration::from_mask(n, mask & ((1u64 << n) - 1));
        let spec = RateSpec::nearest_neighbor(k.space(), t).unwrap();
        for (kind, rate) in simulate::rates_from_scratch(&k, &Rates::Kawasaki(spec), &xi).unwrap() {
            prop_assert!(rate >= 0.0);
            let is_jump = matches!(kind, EventKind::Jump { .. });
            prop_assert!(is_jump);
            let mut next = xi.clone();
            kind.apply(&mut next).unwrap();
            prop_assert_eq!(next.len(), xi.len());
        }
    }

    #[test]
    fn bitstring_round_trip(mask in any::<u64>(), n in 1usize..=64) {
        let mask = if n == 64 { mask } else { mask & ((1u64 << n) - 1) };
        let xi = Configuration::from_mask(n, mask);
        prop_assert_eq!(Configuration::from_bitstring(&xi.to_bitstring()).unwrap(), xi.clone());
        prop_assert_eq!(xi.to_mask(), mask);
    }

    #[test]
    fn config_round_trip(t in 0.0f64..=1.0, seed in any::<u64>(), horizon in 10.0f64..1e4) {
        let mut cfg = ExperimentConfig::a2();
        cfg.rates.t = t;
        cfg.run.seed = seed;
        cfg.run.horizon = horizon;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), cfg);
    }
}
