use dprec_core::accountant::{
    bitrate_bound, calibrate_clip, gauss_baseline_epsilon, renyi_gauss, renyi_subsampled,
    AccountantState, BitrateQuery, OrderGrid, PrivacyTarget,
};
use dprec_core::error::Error;

#[path = "support/oracles.rs"]
mod oracles;

use oracles::{numeric_gauss, numeric_mixture, INDEPENDENT};

#[test]
fn gaussian_divergence_matches_integration_both_ways() {
    for lam in 2..=8 {
        let l = f64::from(lam);
        for ratio in [0.1, 0.5, 1.0, 2.0] {
            let sigma = 0.7;
            let c = ratio * sigma;
            let want = renyi_gauss(l, c, sigma).unwrap();
            let (pq, qp) = numeric_gauss(l, c, sigma);
            assert!((pq - want).abs() < 1e-6, "λ={lam} C/σ={ratio}");
            assert!((qp - want).abs() < 1e-6, "reverse λ={lam} C/σ={ratio}");
        }
    }
}

#[test]
fn subsampled_bound_matches_integration_and_dominates_reverse() {
    for lam in 2..=8 {
        let l = f64::from(lam);
        for ratio in [0.1, 0.5, 1.0, 2.0] {
            for alpha in [0.01, 0.1, 0.5, 1.0] {
                let bound = renyi_subsampled(l, ratio, 1.0, alpha).unwrap();
                let (fwd, rev) = numeric_mixture(l, ratio, alpha);
                assert!(
                    (bound - fwd).abs() < 1e-6,
                    "λ={lam} C/σ={ratio} α={alpha}: {bound} vs {fwd}"
                );
                assert!(
                    bound >= rev - 1e-9,
                    "λ={lam} C/σ={ratio} α={alpha}: reverse {rev} above {bound}"
                );
                assert!(bound <= renyi_gauss(l, ratio, 1.0).unwrap() + 1e-12);
            }
        }
    }
}

#[test]
fn documented_point_values() {
    assert!((renyi_gauss(2.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((renyi_gauss(3.0, 0.1, 0.05).unwrap() - 6.0).abs() < 1e-12);
    let (fwd, _) = numeric_mixture(2.0, 1.0, 0.5);
    let v = renyi_subsampled(2.0, 1.0, 1.0, 0.5).unwrap();
    assert!((v - fwd).abs() < 1e-6);
    assert!((v - (0.75 + 0.25 * std::f64::consts::E).ln()).abs() < 1e-12);
}

#[test]
fn epsilon_matches_independent_implementation() {
    for (i, &(c, sigma, alpha, steps, delta, bits, want)) in INDEPENDENT.iter().enumerate() {
        let state = AccountantState::new(OrderGrid::default())
            .step_n(c, sigma, alpha, steps)
            .unwrap();
        let got = state.epsilon_of_delta(delta, bits).unwrap().epsilon;
        assert!((got - want).abs() <= 1e-9, "config {i}: {got} vs {want}");
    }
}

#[test]
fn step_n_equals_repeated_steps() {
    let grid = OrderGrid::new(vec![2, 5, 9]).unwrap();
    let mut looped = AccountantState::new(grid.clone());
    for _ in 0..4 {
        looped = looped.step(0.6, 1.0, 0.2).unwrap();
    }
    let batched = AccountantState::new(grid).step_n(0.6, 1.0, 0.2, 4).unwrap();
    assert_eq!(looped.steps(), batched.steps());
    for (a, b) in looped
        .k_hat()
        .iter()
        .zip(batched.k_hat())
        .chain(looped.m_hat().iter().zip(batched.m_hat()))
    {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn single_round_local_epsilon_formula() {
    let grid = OrderGrid::new(vec![2]).unwrap();
    let s = AccountantState::new(grid).step(0.8, 1.0, 1.0).unwrap();
    let bits = 20;
    let overhead = 12.0 * (0.64f64).exp() / 2f64.powi(20);
    let want = 0.5 * s.k_hat()[0] + s.m_hat()[0] - 0.5 * (1e-3 - overhead).ln();
    let got = s.local_epsilon_of_delta(1e-3, bits).unwrap();
    assert!((got.epsilon - want).abs() < 1e-12);
    assert!((got.overhead - overhead).abs() < 1e-18);
}

#[test]
fn local_requires_unamplified_state() {
    let s = AccountantState::new(OrderGrid::default())
        .step(0.8, 1.0, 0.5)
        .unwrap();
    assert!(matches!(
        s.local_epsilon_of_delta(1e-3, 100),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn local_dominates_central() {
    let grid = OrderGrid::default();
    let central = AccountantState::new(grid.clone())
        .step_n(0.5, 1.0, 0.01, 500)
        .unwrap();
    let local = AccountantState::new(grid)
        .step_n(0.5, 1.0, 1.0, 500)
        .unwrap();
    let e_c = central.epsilon_of_delta(1e-5, 40_000).unwrap().epsilon;
    let e_l = local.local_epsilon_of_delta(1e-5, 40_000).unwrap().epsilon;
    assert!(e_l >= e_c);
}

#[test]
fn baseline_single_step_formula() {
    let grid = OrderGrid::new(vec![2]).unwrap();
    for z in [0.5, 1.0, 3.0] {
        let got = gauss_baseline_epsilon(1, 1.0, z, 1e-4, &grid).unwrap();
        assert!((got - (1.0 / (z * z) + (1e4f64).ln())).abs() < 1e-12);
    }
    let zero = gauss_baseline_epsilon(0, 0.1, 1.0, 1e-4, &OrderGrid::default()).unwrap();
    assert!((zero - 1e4f64.ln() / 63.0).abs() < 1e-12);
}

#[test]
fn bitrate_examples() {
    let five = bitrate_bound(BitrateQuery {
        xi: 0.75,
        g: 1.0,
        d2: std::f64::consts::LN_2,
    })
    .unwrap();
    assert!((five - 5.0).abs() < 1e-12);
    let base = bitrate_bound(BitrateQuery {
        xi: 0.1,
        g: 1.0,
        d2: 0.3,
    })
    .unwrap();
    let doubled = bitrate_bound(BitrateQuery {
        xi: 0.1,
        g: 2.0,
        d2: 0.3,
    })
    .unwrap();
    assert!((doubled - base - 1.0).abs() < 1e-12);
    assert_eq!(
        BitrateQuery {
            xi: 12.0,
            g: 1.0,
            d2: 0.0
        }
        .raw_bits(),
        0.0
    );
    assert!(matches!(
        bitrate_bound(BitrateQuery {
            xi: 12.0,
            g: 1.0,
            d2: 0.0
        }),
        Err(Error::VacuousBound { .. })
    ));
}

#[test]
fn calibration_orders_and_magnitudes_for_the_mnist_shape() {
    let grid = OrderGrid::default();
    let calibrate = |eps: f64| {
        let target = PrivacyTarget::new(eps, 1e-5).unwrap();
        calibrate_clip(1000, 10, 100, 1.0, 1000 * 10 * 7 * 8, target, &grid).unwrap()
    };
    let (c3, c6) = (calibrate(3.0), calibrate(6.0));
    assert!(c6 > c3);
    assert!((c3 / 0.5 - 1.0).abs() < 0.2, "c(3) = {c3}");
    assert!((c6 / 0.7625 - 1.0).abs() < 0.2, "c(6) = {c6}");
}

#[test]
fn calibration_shrinks_with_more_rounds() {
    let grid = OrderGrid::default();
    let target = PrivacyTarget::new(4.0, 1e-4).unwrap();
    let a = calibrate_clip(100, 10, 100, 1.0, 1 << 40, target, &grid).unwrap();
    let b = calibrate_clip(200, 10, 100, 1.0, 1 << 40, target, &grid).unwrap();
    assert!(b < a);
}
