use heatchain_core::jump::{path_functionals, simulate};
use heatchain_core::model::{apply_exchange, sample_beta, select_clock, total_rate};
use heatchain_core::ode::drift;
use heatchain_core::{ChainConfig, EnergyState, ExchangeDraw, RateFunctionSpec, RateKind};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = RateKind> {
    prop_oneof![
        (0.1f64..5.0).prop_map(RateKind::Constant),
        Just(RateKind::SqrtProduct),
        Just(RateKind::SqrtHarmonic),
        Just(RateKind::MinEnergySqrt),
        Just(RateKind::MinEnergy),
    ]
}

fn open01() -> impl Strategy<Value = f64> {
    (1u64..(1 << 52)).prop_map(|k| k as f64 / (1u64 << 52) as f64)
}

fn chain() -> impl Strategy<Value = (ChainConfig, EnergyState)> {
    (1usize..7, 2u64..2000, 0.2f64..5.0, 0.2f64..5.0, kind()).prop_flat_map(|(n, m, tl, tr, k)| {
        let cfg = ChainConfig::new(n, m, tl, tr, k).unwrap();
        (Just(cfg), proptest::collection::vec(0.01f64..10.0, n)).prop_map(|(c, e)| (c, EnergyState::new(e).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exchange_conserves_and_stays_positive(
        (cfg, state) in chain(),
        p1 in open01(), p2 in open01(), p3 in open01(), u1 in open01(), u2 in open01(),
    ) {
        let n = cfg.n_cells;
        let draw = ExchangeDraw::from_uniforms(p1, p2, p3, u1, u2, cfg.particles).unwrap();
        let k = select_clock(&state, &cfg, p1).unwrap();
        prop_assert!(k <= n);
        let (after, flux) = apply_exchange(&state, &cfg, k, &draw).unwrap();
        prop_assert!(after.as_slice().iter().all(|&v| v > 0.0 && v.is_finite()));
        let (e0, e1) = (state.total(), after.total());
        let scale = 1e-12 * e0.max(1.0);
        if k == 0 {
            prop_assert!((e1 - e0 - flux).abs() <= scale);
        } else if k == n {
            prop_assert!((e0 - e1 - flux).abs() <= scale);
        } else {
            prop_assert!((e1 - e0).abs() <= scale);
            prop_assert!((after[k - 1] - (state[k - 1] - flux)).abs() <= scale);
        }
        // only the cells touching bond k move
        for i in 0..n {
            if i + 1 != k && i != k {
                prop_assert_eq!(after[i], state[i]);
            }
        }
    }

    #[test]
    fn rates_positive_and_capped((cfg, state) in chain()) {
        let r = total_rate(&state, &cfg).unwrap();
        let cap = cfg.rate_cap();
        prop_assert!(r > 0.0 && r <= cap * (cfg.n_cells + 1) as f64);
        for k in 0..=cfg.n_cells {
            let f = cfg.bond_rate(state.as_slice(), k);
            prop_assert!(f > 0.0 && f <= cap);
        }
    }

    #[test]
    fn rate_is_symmetric(k in kind(), a in 0.01f64..50.0, b in 0.01f64..50.0) {
        let spec = RateFunctionSpec::new(k, 30.0).unwrap();
        prop_assert_eq!(spec.eval(a, b), spec.eval(b, a));
    }

    #[test]
    fn beta_draws_in_unit_interval(u in open01(), m in 2u64..1_000_000_000) {
        let b = sample_beta(u, m).unwrap();
        prop_assert!(b > 0.0 && b < 1.0);
    }

    #[test]
    fn drift_sums_to_boundary_flux((cfg, state) in chain()) {
        // interior terms telescope; only the two bath bonds remain
        let f = drift(&state, &cfg).unwrap();
        let e = state.as_slice();
        let n = cfg.n_cells;
        let left = 0.5 * cfg.bond_rate(e, 0) * (cfg.t_left - e[0]);
        let right = 0.5 * cfg.bond_rate(e, n) * (cfg.t_right - e[n - 1]);
        let s: f64 = f.iter().sum();
        prop_assert!((s - left - right).abs() <= 1e-10 * (left.abs() + right.abs() + 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_energy_balance((cfg, state) in chain(), seed in any::<u64>()) {
        let tr = simulate(&cfg, &state, 0.05, seed).unwrap();
        prop_assert!(tr.log_complete);
        let pf = path_functionals(&tr);
        let gained = tr.final_state.total() - tr.initial_state.total();
        prop_assert!((gained - pf.boundary_influx).abs() <= 1e-9 * tr.initial_state.total().max(1.0));
        prop_assert!(tr.events.windows(2).all(|w| w[0].time < w[1].time));
        prop_assert!(tr.events.iter().all(|e| e.time < 0.05 && e.state_after.as_slice().iter().all(|&v| v > 0.0)));
        let per_bond: u64 = tr.bond_events.iter().sum();
        prop_assert_eq!(per_bond, tr.n_events);
    }
}
