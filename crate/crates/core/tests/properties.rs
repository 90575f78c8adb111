mod common;

use countcp::changepoint::{c_statistic, q_statistics};
use countcp::diagnostics::{gof_statistic, EvalGrid, GofConfig};
use countcp::likelihood::{loglik, Derivatives};
use countcp::model::{check_params, intensity_path, zero_history_intensity};
use countcp::{CountSeries, ModelSpec, ParamVector, Segment};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        (0usize..3, 1usize..3).prop_map(|(p, q)| ModelSpec::linear(p, q).unwrap()),
        (0usize..3, 1usize..3, 1.0f64..3.0).prop_map(|(p, q, d)| ModelSpec::power(p, q, d).unwrap()),
    ]
}

/// Admissible parameter: coefficient roots on a scaled simplex.
fn theta_strategy(spec: ModelSpec) -> impl Strategy<Value = (ModelSpec, ParamVector)> {
    let m = spec.p() + spec.q();
    (
        0.01f64..5.0,
        prop::collection::vec(0.0f64..1.0, m),
        0.0f64..0.95,
    )
        .prop_map(move |(a0, raw, total)| {
            let s: f64 = raw.iter().sum::<f64>().max(1e-9);
            let mut v = vec![a0];
            v.extend(raw.iter().map(|r| (r / s * total).powf(spec.delta())));
            let th = ParamVector::from_slice(&spec, &v).unwrap();
            (spec.clone(), th)
        })
}

fn model_and_data() -> impl Strategy<Value = (ModelSpec, ParamVector, CountSeries)> {
    spec_strategy()
        .prop_flat_map(theta_strategy)
        .prop_flat_map(|(spec, th)| {
            prop::collection::vec(0u64..40, 5..120)
                .prop_map(move |c| (spec.clone(), th.clone(), CountSeries::new(c).unwrap()))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intensities_are_positive_and_bounded_below((spec, th, y) in model_and_data()) {
        prop_assert!(check_params(&spec, &th).unwrap().is_empty());
        let path = intensity_path(&spec, &th, &y, false).unwrap();
        let floor = th.alpha0.powf(1.0 / spec.delta());
        prop_assert!((path.lambdas[0] - zero_history_intensity(&spec, &th).unwrap()).abs() < 1e-9);
        for l in &path.lambdas {
            prop_assert!(*l > 0.0);
            prop_assert!(*l >= floor * (1.0 - 1e-12));
        }
    }

    #[test]
    fn loglik_is_additive_over_segments((spec, th, y) in model_and_data(), cut in 0.0f64..1.0) {
        let n = y.len();
        let k = 1 + ((n - 1) as f64 * cut) as usize;
        prop_assume!(k < n);
        let whole = loglik(&spec, &th, &y, y.full(), Derivatives::Score).unwrap();
        let a = loglik(&spec, &th, &y, Segment::new(1, k).unwrap(), Derivatives::Score).unwrap();
        let b = loglik(&spec, &th, &y, Segment::new(k + 1, n).unwrap(), Derivatives::Score).unwrap();
        prop_assert!((whole.value - a.value - b.value).abs() <= 1e-8 * whole.value.abs().max(1.0));
        let s = a.score.unwrap() + b.score.unwrap();
        prop_assert!((whole.score.unwrap() - s).amax() <= 1e-8 * 1e3);
    }

    #[test]
    fn information_blocks_are_symmetric_psd((spec, th, y) in model_and_data()) {
        let e = loglik(&spec, &th, &y, y.full(), Derivatives::Full).unwrap();
        let o = e.score_outer.unwrap();
        let h = e.neg_hessian.unwrap();
        prop_assert!((&o - o.transpose()).amax() <= 1e-9 * o.amax().max(1.0));
        prop_assert!((&h - h.transpose()).amax() <= 1e-9 * h.amax().max(1.0));
        prop_assert!(countcp::linalg::min_eigenvalue(&o) >= -1e-9 * o.amax().max(1.0));
    }

    #[test]
    fn statistics_are_nonnegative_and_scale_with_sigma(
        before in prop::collection::vec(-2.0f64..2.0, 3),
        after in prop::collection::vec(-2.0f64..2.0, 3),
        full in prop::collection::vec(-2.0f64..2.0, 3),
        a in prop::collection::vec(-1.0f64..1.0, 9),
        k in 10usize..990,
        c in 0.1f64..10.0,
        gamma in 0.0f64..0.49,
    ) {
        let m = DMatrix::from_row_slice(3, 3, &a);
        let sigma = &m * m.transpose();
        let v = c_statistic(1000, k, gamma, &before, &after, &sigma);
        prop_assert!(v >= -1e-12);
        let vc = c_statistic(1000, k, gamma, &before, &after, &(&sigma * c));
        prop_assert!((vc - c * v).abs() <= 1e-9 * vc.abs().max(1.0));
        let (q1, q2) = q_statistics(1000, k, &before, &after, &full, &sigma);
        let (q1c, q2c) = q_statistics(1000, k, &before, &after, &full, &(&sigma * c));
        prop_assert!(q1 >= -1e-12 && q2 >= -1e-12);
        prop_assert!((q1c - c * q1).abs() <= 1e-9 * q1c.abs().max(1.0));
        prop_assert!((q2c - c * q2).abs() <= 1e-9 * q2c.abs().max(1.0));
        prop_assert_eq!(c_statistic(1000, k, gamma, &before, &before, &sigma), 0.0);
    }

    #[test]
    fn gof_statistic_ignores_grid_order(seed in 0u64..1000, rot in 1usize..50) {
        let spec = ModelSpec::linear(0, 1).unwrap();
        let th = ParamVector::new(1.0, vec![], vec![0.3]);
        let y = common::simulate(&spec, &[1.0, 0.3], 100, seed);
        let grid: Vec<[f64; 2]> = (0..50).map(|i| [0.5 + 0.05 * i as f64, (i % 6) as f64]).collect();
        let mut rotated = grid.clone();
        rotated.rotate_left(rot);
        rotated.reverse();
        let cfg = |g: Vec<[f64; 2]>| GofConfig { eval_grid: EvalGrid::Points(g), ..GofConfig::default() };
        let a = gof_statistic(&spec, &th, &y, &cfg(grid)).unwrap().value;
        let b = gof_statistic(&spec, &th, &y, &cfg(rotated)).unwrap().value;
        prop_assert_eq!(a, b);
    }
}
