mod common;

use countcp::changepoint::{
    analyze, default_windows, locate_breakpoint, segment_multiple, split_covariance, write_trajectory_csv,
    SigmaVariant, Statistic, TestConfig,
};
use countcp::linalg::frobenius_rel;
use countcp::nulldist::FixedCritical;
use countcp::{fit_mle, Error, FitOptions, Segment};

use common::{critical_values, linear, simulate, simulate_change};

#[test]
fn split_covariance_matches_full_sample_information_without_change() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 5000, 12);
    let u = default_windows(5000, 2, 2.5).unwrap().u_n;
    let hat = split_covariance(&spec, &y, u, SigmaVariant::SplitHat).unwrap();
    let tilde = split_covariance(&spec, &y, u, SigmaVariant::SplitTilde).unwrap();
    let full = fit_mle(&spec, &y, y.full(), &FitOptions::default()).unwrap();
    assert!(frobenius_rel(&hat.matrix, &full.sigma_score) <= 0.15);
    assert!(frobenius_rel(&hat.matrix, &tilde.matrix) <= 0.2);
    assert!((&hat.matrix - hat.matrix.transpose()).amax() < 1e-12);
    assert!(countcp::linalg::min_eigenvalue(&hat.matrix) >= 0.0);
}

#[test]
fn split_covariance_first_block_tracks_the_pre_change_regime() {
    let spec = linear(0, 1);
    let y = simulate_change(&spec, &[1.0, 0.2], &[(0.5, &[1.0, 0.45])], 5000, 13);
    let hat = split_covariance(&spec, &y, 125, SigmaVariant::SplitHat).unwrap();
    // Information of the pre-change regime from a long stationary run.
    let pre = simulate(&spec, &[1.0, 0.2], 20_000, 14);
    let pre_fit = fit_mle(&spec, &pre, pre.full(), &FitOptions::default()).unwrap();
    let rel = frobenius_rel(&hat.first.sigma_score, &pre_fit.sigma_score);
    assert!(rel <= 0.2, "first block {} vs {}: {rel}", hat.first.sigma_score, pre_fit.sigma_score);
}

#[test]
fn figure_one_change_is_detected_and_located() {
    let spec = linear(0, 1);
    let y = simulate_change(&spec, &[1.0, 0.2], &[(0.5, &[1.0, 0.45])], 1000, 2);
    let analysis = analyze(&spec, &y, &TestConfig::default()).unwrap();
    let c = analysis.report(Statistic::C, critical_values()).unwrap();
    let q = analysis.report(Statistic::Q, critical_values()).unwrap();
    assert!(c.reject && q.reject);
    let k = locate_breakpoint(&c).unwrap();
    assert!((400..=600).contains(&k), "k_hat = {k}");
    assert_eq!(c.trajectory.len(), 1000 - 2 * 125 + 1);
    assert_eq!(q.alpha_effective, 0.025);
    let max = c.trajectory.iter().map(|p| p.value).fold(f64::MIN, f64::max);
    assert_eq!(max, c.stat_value);
    assert_eq!(c.theta_before.segment, Segment::new(1, k).unwrap());
}

#[test]
fn quiet_series_is_not_rejected_and_has_no_breakpoint() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 1000, 5);
    let cfg = TestConfig::default();
    let report = analyze(&spec, &y, &cfg).unwrap().report(Statistic::C, &FixedCritical(1e9)).unwrap();
    assert!(!report.reject);
    assert!(matches!(locate_breakpoint(&report), Err(Error::NotRejected)));
}

#[test]
fn statistics_scale_linearly_with_the_weighting_matrix() {
    let spec = linear(1, 1);
    let y = simulate(&spec, &[1.0, 0.1, 0.2], 600, 6);
    let analysis = analyze(&spec, &y, &TestConfig::default()).unwrap();
    let sigma = analysis.sigma.matrix.clone();
    for stat in [Statistic::C, Statistic::Q] {
        let base = analysis.trajectory(stat, &sigma);
        let scaled = analysis.trajectory(stat, &(&sigma * 3.5));
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b.value - 3.5 * a.value).abs() <= 1e-12 * b.value.abs().max(1.0));
        }
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn reversal_swaps_the_two_q_trajectories() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 1000, 8);
    let cfg = TestConfig::default();
    let fwd = analyze(&spec, &y, &cfg).unwrap();
    let rev = analyze(&spec, &y.reversed(), &cfg).unwrap();
    let sigma = fwd.sigma.matrix.clone();
    let q_fwd = fwd.trajectory(Statistic::Q, &sigma);
    let q_rev = rev.trajectory(Statistic::Q, &sigma);
    let n = y.len();
    // Q1 at k forward pairs with Q2 at n - k reversed.
    let mut a = Vec::new();
    let mut b = Vec::new();
    for p in &q_fwd {
        if let Some(r) = q_rev.iter().find(|r| r.k == n - p.k) {
            a.push(p.q1.unwrap());
            b.push(r.q2.unwrap());
        }
    }
    let r = correlation(&a, &b);
    assert!(r >= 0.9, "correlation {r}");
}

#[test]
fn cold_and_warm_trajectories_agree() {
    let spec = linear(0, 1);
    let y = simulate_change(&spec, &[1.0, 0.2], &[(0.5, &[1.0, 0.45])], 400, 9);
    let warm = analyze(&spec, &y, &TestConfig::default()).unwrap();
    let cold = analyze(
        &spec,
        &y,
        &TestConfig {
            warm_start: false,
            ..TestConfig::default()
        },
    )
    .unwrap();
    let s = warm.sigma.matrix.clone();
    for (a, b) in warm.trajectory(Statistic::C, &s).iter().zip(cold.trajectory(Statistic::C, &s).iter()) {
        assert_eq!(a.k, b.k);
        assert!((a.value - b.value).abs() <= 1e-4 * a.value.abs().max(1.0), "k {}: {} vs {}", a.k, a.value, b.value);
    }
}

#[test]
fn strided_search_finds_the_dense_argmax() {
    let spec = linear(0, 1);
    let y = simulate_change(&spec, &[1.0, 0.2], &[(0.5, &[1.0, 0.45])], 1000, 10);
    let dense = analyze(&spec, &y, &TestConfig::default()).unwrap();
    let strided = analyze(
        &spec,
        &y,
        &TestConfig {
            stride: 10,
            ..TestConfig::default()
        },
    )
    .unwrap();
    let crit = FixedCritical(1.0);
    let a = dense.report(Statistic::C, &crit).unwrap();
    let b = strided.report(Statistic::C, &crit).unwrap();
    assert!(b.trajectory.len() < a.trajectory.len());
    assert!((a.k_hat as i64 - b.k_hat as i64).abs() <= 1);
    assert!((a.stat_value - b.stat_value).abs() <= 1e-4 * a.stat_value);
}

#[test]
fn short_series_are_refused() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 200, 1);
    let cfg = TestConfig {
        v_n: Some(60),
        u_n: Some(60),
        ..TestConfig::default()
    };
    assert!(matches!(analyze(&spec, &y, &cfg), Err(Error::SeriesTooShort { n: 200, min: 240 })));
}

#[test]
fn trajectory_csv_has_one_row_per_split() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 300, 2);
    let report = analyze(&spec, &y, &TestConfig::default())
        .unwrap()
        .report(Statistic::Q, &FixedCritical(3.0))
        .unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&report, &spec.param_names(), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let v = report.v_n;
    assert_eq!(text.lines().count(), 1 + 300 - 2 * v + 1 - report.skipped.len());
    assert!(text.starts_with("k,stat,q1,q2,before_"));
}

#[test]
fn segmentation_finds_two_changes() {
    let spec = linear(0, 1);
    let y = simulate_change(&spec, &[1.0, 0.2], &[(0.3, &[1.0, 0.45]), (0.7, &[1.0, 0.15])], 1000, 4);
    let seg = segment_multiple(&spec, &y, &TestConfig::default(), 100, critical_values()).unwrap();
    assert_eq!(seg.breakpoints.len(), 2, "{:?}", seg.breakpoints);
    assert!((seg.breakpoints[0] as i64 - 300).abs() <= 60);
    assert!((seg.breakpoints[1] as i64 - 700).abs() <= 60);
    assert_eq!(seg.segments.len(), 3);
    assert_eq!(seg.segments[0].segment.lo, 1);
    assert_eq!(seg.segments[2].segment.hi, 1000);
}

#[test]
fn segmentation_of_a_quiet_series_is_empty() {
    let spec = linear(0, 1);
    let y = simulate(&spec, &[1.0, 0.2], 800, 15);
    let seg = segment_multiple(&spec, &y, &TestConfig::default(), 100, &FixedCritical(1e6)).unwrap();
    assert!(seg.breakpoints.is_empty());
    assert_eq!(seg.segments.len(), 1);
}
