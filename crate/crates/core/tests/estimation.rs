mod common;

use countcp::likelihood::{loglik, Derivatives};
use countcp::{fit_mle, FitOptions, ParamVector, Segment};

use common::{linear, power, simulate};

/// Best log-likelihood over the grid `[0.2, 3] x [0, 0.8]` with step 0.02.
pub fn grid_best(y: &countcp::CountSeries) -> (f64, [f64; 2]) {
    let spec = linear(0, 1);
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for i in 0..=140 {
        let a0 = 0.2 + 0.02 * i as f64;
        for j in 0..=40 {
            let b = 0.02 * j as f64;
            let th = ParamVector::new(a0, vec![], vec![b]);
            let v = loglik(&spec, &th, y, y.full(), Derivatives::None).unwrap().value;
            if v > best.0 {
                best = (v, [a0, b]);
            }
        }
    }
    best
}

#[test]
fn optimizer_beats_a_brute_force_grid() {
    let spec = linear(0, 1);
    for seed in 0..3 {
        let y = simulate(&spec, &[1.0, 0.3], 200, 300 + seed);
        let fit = fit_mle(&spec, &y, y.full(), &FitOptions::default()).unwrap();
        let (best, at) = grid_best(&y);
        assert!(fit.loglik >= best - 1e-6, "seed {seed}: {} < grid {best} at {at:?}", fit.loglik);
    }
}

#[test]
fn warm_start_reaches_the_cold_optimum() {
    let spec = linear(1, 1);
    let y = simulate(&spec, &[1.0, 0.1, 0.2], 1000, 77);
    let mut prev = fit_mle(&spec, &y, Segment::new(1, 150).unwrap(), &FitOptions::default()).unwrap();
    for k in (151..=1000).step_by(45).take(20) {
        let seg = Segment::new(1, k).unwrap();
        let cold = fit_mle(&spec, &y, seg, &FitOptions::default()).unwrap();
        let warm = fit_mle(&spec, &y, seg, &FitOptions::warm(prev.theta_hat.clone())).unwrap();
        assert!(
            warm.loglik >= cold.loglik - 1e-8,
            "k = {k}: warm {} cold {}",
            warm.loglik,
            cold.loglik
        );
        prev = warm;
    }
}

#[test]
fn fit_recovers_the_simulating_parameter() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 2000, 1);
    let fit = fit_mle(&spec, &y, y.full(), &FitOptions::default()).unwrap();
    assert!(fit.converged);
    for (i, truth) in [1.0, 0.2].iter().enumerate() {
        let z = (fit.theta_vec()[i] - truth) / fit.std_errors[i];
        assert!(z.abs() < 3.0, "component {i}: z = {z}");
    }
    assert!(fit.grad_norm <= 1e-5);
}

#[test]
fn power_family_fit_recovers_the_parameter() {
    let spec = power(0, 1, 2.0);
    let y = simulate(&spec, &[0.8, 0.15], 3000, 2);
    let fit = fit_mle(&spec, &y, y.full(), &FitOptions::default()).unwrap();
    for (i, truth) in [0.8, 0.15].iter().enumerate() {
        let z = (fit.theta_vec()[i] - truth) / fit.std_errors[i];
        assert!(z.abs() < 3.5, "component {i}: z = {z}");
    }
}

#[test]
fn sigma_hessian_is_positive_semidefinite_at_the_optimum() {
    let spec = linear(1, 1);
    let y = simulate(&spec, &[0.3, 0.5, 0.1], 1500, 8);
    let fit = fit_mle(&spec, &y, y.full(), &FitOptions::default()).unwrap();
    let h = &fit.sigma_hessian;
    assert!((h - h.transpose()).amax() < 1e-10);
    assert!(countcp::linalg::min_eigenvalue(h) >= -1e-8);
}

#[test]
fn fits_are_reproducible_for_a_seed() {
    let spec = linear(1, 1);
    let y = simulate(&spec, &[1.0, 0.1, 0.2], 400, 9);
    let opts = FitOptions {
        seed: 4,
        ..FitOptions::default()
    };
    let a = fit_mle(&spec, &y, y.full(), &opts).unwrap();
    let b = fit_mle(&spec, &y, y.full(), &opts).unwrap();
    assert_eq!(a.theta_vec(), b.theta_vec());
    assert_eq!(a.loglik, b.loglik);
}
