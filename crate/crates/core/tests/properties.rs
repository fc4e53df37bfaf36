use proptest::prelude::*;
use rankmfg::model::monotonicity_pairing;
use rankmfg::sde::{make_time_grid, simulate_strategy, StrategySpec};
use rankmfg::value::{bound_violations, lemma_bounds};
use rankmfg::{CdfConvention, EmpiricalMeasure, ModelParams, QuadratureConfig, RewardSpec, Seed, ValueField};

fn measure() -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-30i32..30, 1u32..10), 1..25).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1 as f64).sum();
        EmpiricalMeasure::from_weighted(atoms.into_iter().map(|(x, w)| (x as f64 / 10.0, w as f64 / total)).collect())
            .unwrap()
    })
}

fn params() -> impl Strategy<Value = ModelParams> {
    (0.3f64..2.0, 0.3f64..2.0, 0.5f64..2.0).prop_map(|(s, c, t)| ModelParams::new(s, 0.0, c, t).unwrap())
}

fn rank_reward() -> impl Strategy<Value = RewardSpec> {
    (0.1f64..2.5, prop::sample::select(vec![0.5, 1.0, 2.0])).prop_map(|(s, e)| RewardSpec::rank_power(s, e).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn value_bounds_hold(p in params(), r in rank_reward(), mu in measure(), frac in 0.0f64..0.999, x in -4.0f64..4.0) {
        let t = frac * p.horizon_t;
        let field = ValueField::new(p, r.clone(), mu).unwrap();
        let point = field.value_point(t, x).unwrap();
        let b = lemma_bounds(&p, &r, t).unwrap();
        prop_assert!(bound_violations(&b, &point, 1e-9).is_empty(), "{:?}", bound_violations(&b, &point, 1e-9));
    }

    #[test]
    fn drift_identities(p in params(), r in rank_reward(), mu in measure(), frac in 0.0f64..0.99, x in -4.0f64..4.0) {
        let t = frac * p.horizon_t;
        let field = ValueField::new(p, r, mu).unwrap();
        let v = field.value_point(t, x).unwrap();
        let s2 = p.sigma * p.sigma;
        prop_assert!((v.a_star - s2 * v.u_x / v.u).abs() <= 1e-12 * (1.0 + v.a_star.abs()));
        prop_assert!((v.a_star - v.v_x / (2.0 * p.cost_c)).abs() <= 1e-10 * (1.0 + v.a_star.abs()));
        prop_assert!((v.v - p.kappa() * v.u.ln()).abs() <= 1e-12 * (1.0 + v.v.abs()));
        prop_assert!(v.a_star >= 0.0);
    }

    #[test]
    fn gauss_hermite_agrees_with_exact(p in params(), r in rank_reward(), mu in measure(), frac in 0.0f64..0.99, x in -3.0f64..3.0) {
        let t = frac * p.horizon_t;
        let exact = ValueField::with_quadrature(p, r.clone(), mu.clone(), QuadratureConfig::exact_step()).unwrap();
        let gh = ValueField::with_quadrature(p, r, mu, QuadratureConfig::gauss_hermite(128)).unwrap();
        let (a, b) = (exact.value_point(t, x).unwrap(), gh.value_point(t, x).unwrap());
        prop_assert!((a.u - b.u).abs() <= 1e-10 * a.u);
        prop_assert!((a.a_star - b.a_star).abs() <= 1e-8 * (1.0 + a.a_star.abs()));
    }

    #[test]
    fn value_follows_population_shift(p in params(), r in rank_reward(), mu in measure(), q in -2.0f64..2.0, x in -3.0f64..3.0) {
        let t = 0.3 * p.horizon_t;
        let base = ValueField::new(p, r.clone(), mu.clone()).unwrap();
        let moved = ValueField::new(p, r, mu.shift(q)).unwrap();
        let (a, b) = (base.value_point(t, x + q).unwrap(), moved.value_point(t, x).unwrap());
        prop_assert!((a.v - b.v).abs() <= 1e-9 * (1.0 + a.v.abs()));
        prop_assert!((a.a_star - b.a_star).abs() <= 1e-9 * (1.0 + a.a_star.abs()));
    }

    #[test]
    fn linear_rank_pairing_vanishes(scale in 0.1f64..3.0, a in measure(), b in measure()) {
        let r = RewardSpec::rank_power(scale, 1.0).unwrap();
        prop_assert!(monotonicity_pairing(&r, &a, &b, CdfConvention::Regular).abs() <= 1e-10);
    }

    #[test]
    fn mixture_contracts_toward_endpoint(a in measure(), b in measure(), lambda in 0.0f64..=1.0) {
        let m = a.mixture(&b, lambda).unwrap();
        prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.w1_distance(&a) <= lambda * a.w1_distance(&b) + 1e-12);
        prop_assert!((m.mean() - ((1.0 - lambda) * a.mean() + lambda * b.mean())).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batches_are_prefix_consistent(seed in any::<u64>(), small in 1usize..3000, extra in 0usize..3000, a in -1.0f64..1.0) {
        let p = ModelParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let grid = make_time_grid(1.0, 20, 2).unwrap();
        let s = StrategySpec::Constant(a);
        let short = simulate_strategy(&s, &p, &grid, small, Seed(seed)).unwrap();
        let long = simulate_strategy(&s, &p, &grid, small + extra, Seed(seed)).unwrap();
        prop_assert_eq!(&short.terminal_values[..], &long.terminal_values[..small]);
    }
}
