//! Deterministic-limit behaviour: equilibria against closed forms, and the
//! jump process against the ODE at large M.

use heatchain_core::jump::ensemble;
use heatchain_core::ode::{conductivity, drift, drift_jacobian, drift_jacobian_fd, integrate_ode, solve_equilibrium};
use heatchain_core::{ChainConfig, EnergyState, RateKind};

#[test]
fn constant_rate_profile_is_linear() {
    for (n, c, tl, tr) in [(3, 1.0, 1.0, 2.0), (10, 1.0, 1.0, 2.0), (10, 2.5, 0.5, 3.0)] {
        let cfg = ChainConfig::new(n, 100, tl, tr, RateKind::Constant(c)).unwrap();
        let eq = solve_equilibrium(&cfg, 1e-13).unwrap();
        let step = (tr - tl) / (n as f64 + 1.0);
        for i in 0..n {
            let want = tl + (i as f64 + 1.0) * step;
            assert!(
                (eq.e_star[i] - want).abs() < 1e-10,
                "n={n} cell {i}: {} vs {want}",
                eq.e_star[i]
            );
        }
        assert!((eq.c_star - c * step).abs() < 1e-10);
        let k = conductivity(&cfg, 1e-13).unwrap();
        assert!((k.kappa - c / 2.0).abs() < 1e-9);
    }
}

#[test]
fn equilibrium_is_a_zero_of_the_drift() {
    for kind in [RateKind::SqrtProduct, RateKind::SqrtHarmonic, RateKind::MinEnergySqrt] {
        for (tl, tr) in [(1.0, 2.0), (3.0, 0.5)] {
            let cfg = ChainConfig::new(8, 100, tl, tr, kind).unwrap();
            let eq = solve_equilibrium(&cfg, 1e-13).unwrap();
            let f = drift(&eq.e_star, &cfg).unwrap();
            assert!(f.iter().all(|v| v.abs() < 1e-9), "{kind:?} ({tl},{tr}): {f:?}");
            let e = eq.e_star.as_slice();
            let (lo, hi) = (tl.min(tr), tl.max(tr));
            assert!(e.iter().all(|&v| v > lo && v < hi));
            let increasing = e.windows(2).all(|w| w[1] > w[0]);
            assert_eq!(increasing, tr > tl);
        }
    }
}

#[test]
fn mirrored_baths_mirror_the_profile() {
    let a = ChainConfig::new(6, 100, 1.0, 2.5, RateKind::SqrtProduct).unwrap();
    let b = ChainConfig::new(6, 100, 2.5, 1.0, RateKind::SqrtProduct).unwrap();
    let ea = solve_equilibrium(&a, 1e-13).unwrap();
    let eb = solve_equilibrium(&b, 1e-13).unwrap();
    for i in 0..6 {
        assert!((ea.e_star[i] - eb.e_star[5 - i]).abs() < 1e-10);
    }
    assert!((ea.c_star + eb.c_star).abs() < 1e-10);
}

#[test]
fn conductivity_lies_between_bath_rates() {
    for kind in [RateKind::SqrtProduct, RateKind::SqrtHarmonic, RateKind::MinEnergySqrt] {
        for (n, tl, tr) in [(3, 1.0, 2.0), (10, 1.0, 1.2), (20, 4.0, 0.3)] {
            let cfg = ChainConfig::new(n, 100, tl, tr, kind).unwrap();
            let k = conductivity(&cfg, 1e-13).unwrap();
            assert!(k.lower <= k.kappa && k.kappa <= k.upper, "{kind:?} n={n}: {k:?}");
        }
    }
}

#[test]
fn ode_relaxes_to_equilibrium() {
    let cfg = ChainConfig::new(5, 100, 1.0, 2.0, RateKind::SqrtHarmonic).unwrap();
    let eq = solve_equilibrium(&cfg, 1e-13).unwrap();
    let sol = integrate_ode(&cfg, &EnergyState::uniform(5, 3.0).unwrap(), 200.0, 0.01).unwrap();
    for (a, b) in sol.final_state().iter().zip(eq.e_star.as_slice()) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn analytic_jacobian_matches_differences() {
    let cfg = ChainConfig::new(4, 100, 1.0, 2.0, RateKind::SqrtProduct).unwrap();
    let e = [1.3, 0.9, 2.2, 1.6];
    let a = drift_jacobian(&e, &cfg);
    let fd = drift_jacobian_fd(&e, &cfg, 1e-5);
    assert!((a - fd).abs().max() < 1e-8);
}

#[test]
fn large_m_ensemble_follows_ode() {
    let cfg = ChainConfig::new(3, 20_000, 1.0, 2.0, RateKind::SqrtProduct)
        .unwrap()
        .with_seed(17);
    let e0 = EnergyState::new(vec![0.5, 1.5, 2.5]).unwrap();
    let sol = integrate_ode(&cfg, &e0, 1.0, 1e-3).unwrap();
    let ens = ensemble(&cfg, &e0, 200, &[0.5, 1.0], Some(&sol)).unwrap();
    // with a reference, final moments are of sqrt(M) (state - ODE)
    assert!(ens.rescaled);
    let mom = &ens.final_moments;
    for i in 0..3 {
        assert!(
            mom.mean[i].abs() < 4.0 * mom.mean_se[i],
            "cell {i}: {} +- {}",
            mom.mean[i],
            mom.mean_se[i]
        );
    }
    // fluctuations are O(M^-1/2)
    let sup = ens.sup_errors.as_ref().unwrap();
    let worst = sup.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 10.0 / cfg.m().sqrt(), "worst {worst}");
}
