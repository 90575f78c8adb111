//! Tests for a change in the parameter of a Poisson autoregression.
//!
//! For every split point `k` in `[v_n, n - v_n]` the parameter is estimated
//! on `T_{1,k}` and `T_{k+1,n}`. With `Sigma` the split information matrix,
//!
//! ```text
//! C_{n,k}   = q(k/n)^-2 k^2 (n-k)^2 / n^3 * D' Sigma D,   D = theta(T_1k) - theta(T_k+1,n)
//! Q1_{n,k}  = k^2 / n     * E1' Sigma E1,             E1 = theta(T_1k) - theta(T_1n)
//! Q2_{n,k}  = (n-k)^2 / n * E2' Sigma E2,             E2 = theta(T_k+1,n) - theta(T_1n)
//! ```
//!
//! `C` rejects above `c_alpha`; `Q = max(Q1, Q2)` rejects above `c_{alpha/2}`.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_prepared, FitOptions, FitResult};
use crate::linalg::{quad_form, serde_matrix};
use crate::model::{ModelSpec, Prepared};
use crate::nulldist::{check_alpha, check_gamma, weight, CriticalValues};
use crate::series::{CountSeries, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    C,
    Q,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaVariant {
    /// Blocks `T_{1,u}` and `T_{u+1,n}`.
    #[default]
    SplitHat,
    /// Blocks `T_{1,n-u}` and `T_{n-u+1,n}`.
    SplitTilde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub statistic: Statistic,
    pub alpha: f64,
    /// Weight exponent of `q(t) = (t(1-t))^gamma`; 0 means `q = 1`.
    pub gamma: f64,
    /// Window exponent in `u_n = v_n = floor((ln n)^delta0)`.
    pub delta0: f64,
    pub u_n: Option<usize>,
    pub v_n: Option<usize>,
    pub sigma_variant: SigmaVariant,
    /// Initialise each split fit from the previous split's estimate.
    pub warm_start: bool,
    /// Multi-start refit every this many splits along a warm chain.
    pub cold_every: usize,
    /// Evaluate every `stride`-th split, then every split around the coarse
    /// argmax.
    pub stride: usize,
    /// Options for cold (multi-start) fits.
    pub fit: FitOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            statistic: Statistic::C,
            alpha: 0.05,
            gamma: 0.0,
            delta0: 2.5,
            u_n: None,
            v_n: None,
            sigma_variant: SigmaVariant::SplitHat,
            warm_start: true,
            cold_every: 100,
            stride: 1,
            fit: FitOptions::default(),
        }
    }
}

impl TestConfig {
    pub fn with_statistic(mut self, statistic: Statistic) -> Self {
        self.statistic = statistic;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_gamma(self.gamma)?;
        if !(2.5..=3.0).contains(&self.delta0) {
            return Err(Error::Config(format!(
                "delta0 must lie in [2.5, 3], got {}",
                self.delta0
            )));
        }
        if self.stride == 0 || self.cold_every == 0 {
            return Err(Error::Config("stride and cold_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub u_n: usize,
    pub v_n: usize,
}

/// `u_n = v_n = floor((ln n)^delta0)`, clipped to `[5d, n/4]` with the
/// lower bound taking precedence.
pub fn default_windows(n: usize, d: usize, delta0: f64) -> Result<Windows> {
    if n < 30 {
        return Err(Error::SeriesTooShort { n, min: 30 });
    }
    let raw = (n as f64).ln().powf(delta0).floor() as usize;
    let w = raw.min(n / 4).max(5 * d);
    Ok(Windows { u_n: w, v_n: w })
}

fn windows_for(n: usize, d: usize, config: &TestConfig) -> Result<Windows> {
    let mut w = match (config.u_n, config.v_n) {
        (Some(u), Some(v)) => Windows { u_n: u, v_n: v },
        _ => default_windows(n, d, config.delta0)?,
    };
    if let Some(u) = config.u_n {
        w.u_n = u;
    }
    if let Some(v) = config.v_n {
        w.v_n = v;
    }
    if w.u_n < 5 * d || w.v_n < 5 * d {
        return Err(Error::Config(format!(
            "windows u_n = {}, v_n = {} must be at least 5d = {}",
            w.u_n,
            w.v_n,
            5 * d
        )));
    }
    let min = 4 * w.v_n.max(w.u_n);
    if n < min {
        return Err(Error::SeriesTooShort { n, min });
    }
    Ok(w)
}

/// `Sigma_n(u_n)`: the average of the two block information matrices, each
/// at its own block's estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitCovariance {
    #[serde(with = "serde_matrix")]
    pub matrix: DMatrix<f64>,
    pub variant: SigmaVariant,
    /// Window actually used; differs from the requested one after widening.
    pub u_n: usize,
    pub widened: bool,
    pub first: FitResult,
    pub second: FitResult,
}

pub fn split_covariance(
    spec: &ModelSpec,
    y: &CountSeries,
    u_n: usize,
    variant: SigmaVariant,
) -> Result<SplitCovariance> {
    let data = Prepared::new(spec, y);
    split_covariance_prepared(spec, &data, u_n, variant, &FitOptions::default())
}

fn split_blocks(n: usize, u: usize, variant: SigmaVariant) -> (Segment, Segment) {
    match variant {
        SigmaVariant::SplitHat => (Segment { lo: 1, hi: u }, Segment { lo: u + 1, hi: n }),
        SigmaVariant::SplitTilde => (
            Segment { lo: 1, hi: n - u },
            Segment {
                lo: n - u + 1,
                hi: n,
            },
        ),
    }
}

fn split_covariance_prepared(
    spec: &ModelSpec,
    data: &Prepared,
    u_n: usize,
    variant: SigmaVariant,
    opts: &FitOptions,
) -> Result<SplitCovariance> {
    let n = data.len();
    if u_n == 0 || u_n >= n {
        return Err(Error::Config(format!("u_n = {u_n} out of range for n = {n}")));
    }
    let attempt = |u: usize| -> Result<(FitResult, FitResult)> {
        let (a, b) = split_blocks(n, u, variant);
        let fa = fit_prepared(spec, data, a, opts)?;
        let fb = fit_prepared(spec, data, b, opts)?;
        Ok((fa, fb))
    };
    let (u, widened, (first, second)) = match attempt(u_n) {
        Ok(f) => (u_n, false, f),
        Err(first_err) => {
            // Short windows can fail to fit; retry once on a wider one.
            let wide = (2 * u_n).min(n / 4);
            if wide <= u_n {
                return Err(first_err);
            }
            let (a, b) = split_blocks(n, wide, variant);
            match attempt(wide) {
                Ok(f) => (wide, true, f),
                Err(e) => {
                    return Err(Error::FitFailed {
                        lo: a.lo,
                        hi: b.hi,
                        reason: format!("split covariance blocks with u_n = {wide}: {e}"),
                    })
                }
            }
        }
    };
    let matrix = (&first.sigma_score + &second.sigma_score) * 0.5;
    Ok(SplitCovariance {
        matrix,
        variant,
        u_n: u,
        widened,
        first,
        second,
    })
}

/// `C_{n,k}` for given before/after estimates.
pub fn c_statistic(n: usize, k: usize, gamma: f64, before: &[f64], after: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let diff: Vec<f64> = before.iter().zip(after).map(|(a, b)| a - b).collect();
    let q = weight(kf / nf, gamma);
    kf * kf * (nf - kf) * (nf - kf) / (nf * nf * nf) * quad_form(sigma, &diff) / (q * q)
}

/// `(Q1_{n,k}, Q2_{n,k})` for given before/after/full-sample estimates.
pub fn q_statistics(
    n: usize,
    k: usize,
    before: &[f64],
    after: &[f64],
    full: &[f64],
    sigma: &DMatrix<f64>,
) -> (f64, f64) {
    let (nf, kf) = (n as f64, k as f64);
    let e1: Vec<f64> = before.iter().zip(full).map(|(a, b)| a - b).collect();
    let e2: Vec<f64> = after.iter().zip(full).map(|(a, b)| a - b).collect();
    (
        kf * kf / nf * quad_form(sigma, &e1),
        (nf - kf) * (nf - kf) / nf * quad_form(sigma, &e2),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub k: usize,
    pub value: f64,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
}

/// Index of the first maximal point; `None` for an empty trajectory.
pub fn argmax_first(points: &[TrajectoryPoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if best.is_none_or(|(_, v)| p.value > v) {
            best = Some((i, p.value));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: Statistic,
    pub n: usize,
    pub d: usize,
    pub u_n: usize,
    pub v_n: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    pub stat_value: f64,
    /// `max_k Q1` and `max_k Q2` for the `Q` statistic.
    pub q1_value: Option<f64>,
    pub q2_value: Option<f64>,
    pub critical_value: f64,
    pub alpha: f64,
    /// `alpha` for `C`, `alpha / 2` for `Q`.
    pub alpha_effective: f64,
    pub gamma: f64,
    pub reject: bool,
    /// Argmax of the trajectory, ties to the smallest `k`.
    pub k_hat: usize,
    pub theta_full: FitResult,
    pub theta_before: FitResult,
    pub theta_after: FitResult,
    #[serde(with = "serde_matrix")]
    pub sigma_used: DMatrix<f64>,
    pub sigma_variant: SigmaVariant,
    pub sigma_widened: bool,
    pub skipped: Vec<usize>,
}

pub fn locate_breakpoint(report: &TestReport) -> Result<usize> {
    if !report.reject {
        return Err(Error::NotRejected);
    }
    let i = argmax_first(&report.trajectory).ok_or(Error::NotRejected)?;
    Ok(report.trajectory[i].k)
}

/// Trajectory as CSV: `k, stat[, q1, q2], theta_before_*, theta_after_*`.
pub fn write_trajectory_csv<W: Write>(report: &TestReport, names: &[String], mut w: W) -> Result<()> {
    let with_q = report.statistic == Statistic::Q;
    let mut header = vec!["k".to_string(), "stat".to_string()];
    if with_q {
        header.push("q1".into());
        header.push("q2".into());
    }
    header.extend(names.iter().map(|s| format!("before_{s}")));
    header.extend(names.iter().map(|s| format!("after_{s}")));
    writeln!(w, "{}", header.join(","))?;
    for p in &report.trajectory {
        let mut row = vec![p.k.to_string(), p.value.to_string()];
        if with_q {
            row.push(p.q1.unwrap_or(f64::NAN).to_string());
            row.push(p.q2.unwrap_or(f64::NAN).to_string());
        }
        row.extend(p.theta_before.iter().map(f64::to_string));
        row.extend(p.theta_after.iter().map(f64::to_string));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Everything both statistics need: the full-sample fit, the split
/// covariance and the before/after fits at every evaluated split.
#[derive(Clone, Debug)]
pub struct SplitAnalysis {
    pub n: usize,
    pub d: usize,
    pub windows: Windows,
    pub gamma: f64,
    pub alpha: f64,
    pub full: FitResult,
    pub sigma: SplitCovariance,
    ks: Vec<usize>,
    before: Vec<Option<FitResult>>,
    after: Vec<Option<FitResult>>,
}

/// Runs every fit needed by the `C` and `Q` statistics.
pub fn analyze(spec: &ModelSpec, y: &CountSeries, config: &TestConfig) -> Result<SplitAnalysis> {
    config.validate()?;
    let n = y.len();
    let d = spec.dim();
    let windows = windows_for(n, d, config)?;
    let data = Prepared::new(spec, y);
    let full = fit_prepared(spec, &data, y.full(), &config.fit)?;
    let sigma =
        split_covariance_prepared(spec, &data, windows.u_n, config.sigma_variant, &config.fit)?;

    let (lo, hi) = (windows.v_n, n - windows.v_n);
    let mut analysis = SplitAnalysis {
        n,
        d,
        windows,
        gamma: config.gamma,
        alpha: config.alpha,
        full,
        sigma,
        ks: Vec::new(),
        before: Vec::new(),
        after: Vec::new(),
    };
    let coarse: Vec<usize> = if config.stride > 1 {
        let mut ks: Vec<usize> = (lo..=hi).step_by(config.stride).collect();
        if ks.last() != Some(&hi) {
            ks.push(hi);
        }
        ks
    } else {
        (lo..=hi).collect()
    };
    analysis.add_splits(spec, &data, &coarse, config);
    if config.stride > 1 {
        let mut dense = Vec::new();
        for stat in [Statistic::C, Statistic::Q] {
            let traj = analysis.trajectory(stat, &analysis.sigma.matrix);
            if let Some(i) = argmax_first(&traj) {
                let c = traj[i].k;
                dense.extend(c.saturating_sub(config.stride).max(lo)..=(c + config.stride).min(hi));
            }
        }
        dense.sort_unstable();
        dense.dedup();
        dense.retain(|k| analysis.ks.binary_search(k).is_err());
        analysis.add_splits(spec, &data, &dense, config);
    }
    let total = analysis.ks.len();
    let skipped = analysis.skipped().len();
    if skipped * 20 > total {
        return Err(Error::TooManySkipped { skipped, total });
    }
    Ok(analysis)
}

impl SplitAnalysis {
    fn add_splits(&mut self, spec: &ModelSpec, data: &Prepared, ks: &[usize], config: &TestConfig) {
        let n = self.n;
        let prefix = |k: usize| Segment { lo: 1, hi: k };
        let suffix = |k: usize| Segment { lo: k + 1, hi: n };
        let (before, after) = if config.warm_start {
            let before = warm_chain(spec, data, ks, prefix, None, config);
            let after = warm_chain(spec, data, ks, suffix, Some(&self.full), config);
            (before, after)
        } else {
            let cold = |seg: Segment| fit_prepared(spec, data, seg, &config.fit).ok();
            let pairs: Vec<_> = ks
                .par_iter()
                .map(|&k| (cold(prefix(k)), cold(suffix(k))))
                .collect();
            pairs.into_iter().unzip()
        };
        let mut merged: Vec<(usize, Option<FitResult>, Option<FitResult>)> = self
            .ks
            .drain(..)
            .zip(self.before.drain(..).zip(self.after.drain(..)))
            .map(|(k, (b, a))| (k, b, a))
            .chain(ks.iter().copied().zip(before.into_iter().zip(after)).map(|(k, (b, a))| (k, b, a)))
            .collect();
        merged.sort_by_key(|m| m.0);
        for (k, b, a) in merged {
            self.ks.push(k);
            self.before.push(b);
            self.after.push(a);
        }
    }

    /// Split points whose before or after fit failed.
    pub fn skipped(&self) -> Vec<usize> {
        self.ks
            .iter()
            .zip(self.before.iter().zip(&self.after))
            .filter(|(_, (b, a))| b.is_none() || a.is_none())
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn split_points(&self) -> &[usize] {
        &self.ks
    }

    /// Statistic trajectory under an arbitrary weighting matrix; skipped
    /// splits are left out.
    pub fn trajectory(&self, statistic: Statistic, sigma: &DMatrix<f64>) -> Vec<TrajectoryPoint> {
        let full = self.full.theta_vec();
        self.ks
            .iter()
            .zip(self.before.iter().zip(&self.after))
            .filter_map(|(&k, (b, a))| {
                let (b, a) = (b.as_ref()?.theta_vec(), a.as_ref()?.theta_vec());
                let point = match statistic {
                    Statistic::C => TrajectoryPoint {
                        k,
                        value: c_statistic(self.n, k, self.gamma, &b, &a, sigma),
                        q1: None,
                        q2: None,
                        theta_before: b,
                        theta_after: a,
                    },
                    Statistic::Q => {
                        let (q1, q2) = q_statistics(self.n, k, &b, &a, &full, sigma);
                        TrajectoryPoint {
                            k,
                            value: q1.max(q2),
                            q1: Some(q1),
                            q2: Some(q2),
                            theta_before: b,
                            theta_after: a,
                        }
                    }
                };
                Some(point)
            })
            .collect()
    }

    pub fn report(&self, statistic: Statistic, crit: &dyn CriticalValues) -> Result<TestReport> {
        let trajectory = self.trajectory(statistic, &self.sigma.matrix);
        let i = argmax_first(&trajectory).ok_or(Error::TooManySkipped {
            skipped: self.ks.len(),
            total: self.ks.len(),
        })?;
        let k_hat = trajectory[i].k;
        let pos = self.ks.binary_search(&k_hat).expect("k from trajectory");
        let alpha_effective = match statistic {
            Statistic::C => self.alpha,
            Statistic::Q => self.alpha / 2.0,
        };
        // Q's limit does not involve the weight function.
        let gamma = match statistic {
            Statistic::C => self.gamma,
            Statistic::Q => 0.0,
        };
        let critical_value = crit.critical_value(self.d, alpha_effective, gamma)?;
        let stat_value = trajectory[i].value;
        let (q1_value, q2_value) = match statistic {
            Statistic::C => (None, None),
            Statistic::Q => (
                trajectory.iter().filter_map(|p| p.q1).reduce(f64::max),
                trajectory.iter().filter_map(|p| p.q2).reduce(f64::max),
            ),
        };
        Ok(TestReport {
            statistic,
            n: self.n,
            d: self.d,
            u_n: self.sigma.u_n,
            v_n: self.windows.v_n,
            stat_value,
            q1_value,
            q2_value,
            critical_value,
            alpha: self.alpha,
            alpha_effective,
            gamma,
            reject: stat_value > critical_value,
            k_hat,
            theta_full: self.full.clone(),
            theta_before: self.before[pos].clone().expect("not skipped"),
            theta_after: self.after[pos].clone().expect("not skipped"),
            sigma_used: self.sigma.matrix.clone(),
            sigma_variant: self.sigma.variant,
            sigma_widened: self.sigma.widened,
            skipped: self.skipped(),
            trajectory,
        })
    }
}

/// Sequential fits over `ks`, each started from the previous estimate, with
/// a multi-start refit every `cold_every` splits (the better one is kept).
fn warm_chain(
    spec: &ModelSpec,
    data: &Prepared,
    ks: &[usize],
    seg_of: impl Fn(usize) -> Segment,
    seed: Option<&FitResult>,
    config: &TestConfig,
) -> Vec<Option<FitResult>> {
    let mut prev = seed.map(|f| f.theta_hat.clone());
    let mut out = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let seg = seg_of(k);
        let warm = prev
            .as_ref()
            .and_then(|init| fit_prepared(spec, data, seg, &FitOptions::warm(init.clone())).ok());
        let need_cold = warm.is_none() || i % config.cold_every == 0;
        let fit = if need_cold {
            let cold = fit_prepared(spec, data, seg, &config.fit).ok();
            match (warm, cold) {
                (Some(w), Some(c)) => Some(if c.loglik > w.loglik { c } else { w }),
                (w, c) => w.or(c),
            }
        } else {
            warm
        };
        if let Some(f) = &fit {
            prev = Some(f.theta_hat.clone());
        }
        out.push(fit);
    }
    out
}

pub fn stat_c_trajectory(
    spec: &ModelSpec,
    y: &CountSeries,
    config: &TestConfig,
    crit: &dyn CriticalValues,
) -> Result<TestReport> {
    analyze(spec, y, config)?.report(Statistic::C, crit)
}

pub fn stat_q_trajectory(
    spec: &ModelSpec,
    y: &CountSeries,
    config: &TestConfig,
    crit: &dyn CriticalValues,
) -> Result<TestReport> {
    analyze(spec, y, config)?.report(Statistic::Q, crit)
}

/// Runs the statistic named in `config`.
pub fn run_test(
    spec: &ModelSpec,
    y: &CountSeries,
    config: &TestConfig,
    crit: &dyn CriticalValues,
) -> Result<TestReport> {
    analyze(spec, y, config)?.report(config.statistic, crit)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentFit {
    pub segment: Segment,
    pub fit: Option<FitResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Segmentation {
    /// Last index of each segment but the final one, increasing.
    pub breakpoints: Vec<usize>,
    pub segments: Vec<SegmentFit>,
}

/// Binary segmentation with the `Q` test followed by a pruning pass that
/// re-tests every breakpoint between its two neighbours.
pub fn segment_multiple(
    spec: &ModelSpec,
    y: &CountSeries,
    config: &TestConfig,
    min_seg: usize,
    crit: &dyn CriticalValues,
) -> Result<Segmentation> {
    config.validate()?;
    let config = config.clone().with_statistic(Statistic::Q);
    let n = y.len();
    // Sub-segments use their own window rule; explicit overrides apply to
    // the full series only.
    let sub_config = TestConfig {
        u_n: None,
        v_n: None,
        ..config.clone()
    };

    let test_range = |lo: usize, hi: usize| -> Option<usize> {
        let len = hi - lo + 1;
        if len < min_seg.max(30) {
            return None;
        }
        let cfg = if lo == 1 && hi == n { &config } else { &sub_config };
        let w = windows_for(len, spec.dim(), cfg).ok()?;
        if len < min_seg.max(2 * w.v_n) {
            return None;
        }
        let sub = y.slice(lo, hi).ok()?;
        let report = analyze(spec, &sub, cfg).ok()?.report(Statistic::Q, crit).ok()?;
        report.reject.then(|| lo - 1 + report.k_hat)
    };

    let mut breaks = Vec::new();
    let mut stack = vec![(1, n)];
    while let Some((lo, hi)) = stack.pop() {
        if let Some(b) = test_range(lo, hi) {
            breaks.push(b);
            stack.push((lo, b));
            stack.push((b + 1, hi));
        }
    }
    breaks.sort_unstable();

    let mut passes = 0;
    loop {
        passes += 1;
        let mut changed = false;
        for i in 0..breaks.len() {
            let lo = if i == 0 { 1 } else { breaks[i - 1] + 1 };
            let hi = if i + 1 < breaks.len() { breaks[i + 1] } else { n };
            match test_range(lo, hi) {
                None => {
                    breaks.remove(i);
                    changed = true;
                    break;
                }
                Some(b) if b != breaks[i] && b > lo && b < hi => {
                    breaks[i] = b;
                    changed = true;
                }
                Some(_) => {}
            }
        }
        if !changed || passes > 4 * (breaks.len() + 1) {
            break;
        }
    }

    let data = Prepared::new(spec, y);
    let mut segments = Vec::with_capacity(breaks.len() + 1);
    let mut lo = 1;
    for &b in breaks.iter().chain(std::iter::once(&n)) {
        let segment = Segment { lo, hi: b };
        let fit = fit_prepared(spec, &data, segment, &config.fit).ok();
        segments.push(SegmentFit { segment, fit });
        lo = b + 1;
    }
    Ok(Segmentation {
        breakpoints: breaks,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rule_examples() {
        // floor(ln(1000)^2.5) = floor(125.42), floor(ln(500)^2.5) = floor(96.29).
        assert_eq!(default_windows(1000, 2, 2.5).unwrap().u_n, 125);
        assert_eq!(default_windows(500, 2, 2.5).unwrap().v_n, 96);
        assert_eq!(default_windows(30, 2, 2.5).unwrap().u_n, 10);
        assert!(matches!(
            default_windows(29, 2, 2.5),
            Err(Error::SeriesTooShort { n: 29, .. })
        ));
    }

    #[test]
    fn identical_estimates_give_zero_statistics() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let th = [1.0, 0.2];
        for k in [10, 50, 90] {
            assert_eq!(c_statistic(100, k, 0.0, &th, &th, &sigma), 0.0);
            assert_eq!(q_statistics(100, k, &th, &th, &th, &sigma), (0.0, 0.0));
        }
    }

    #[test]
    fn c_statistic_hand_value() {
        // k = 25, n = 100: 25^2 75^2 / 100^3 = 3.515625; D = (0.1, -0.1),
        // D' S D = 0.02 - 0.006 + 0.01 = 0.024.
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = c_statistic(100, 25, 0.0, &[1.1, 0.1], &[1.0, 0.2], &sigma);
        assert!((v - 3.515625 * 0.024).abs() < 1e-12);
        // gamma = 0.25 divides by q^2 = (0.25 * 0.75)^0.5.
        let w = c_statistic(100, 25, 0.25, &[1.1, 0.1], &[1.0, 0.2], &sigma);
        assert!((w - v / 0.1875f64.sqrt()).abs() < 1e-12);
    }

    fn point(k: usize, value: f64) -> TrajectoryPoint {
        TrajectoryPoint {
            k,
            value,
            q1: None,
            q2: None,
            theta_before: vec![],
            theta_after: vec![],
        }
    }

    #[test]
    fn argmax_picks_single_peak_and_breaks_ties_low() {
        let peak: Vec<_> = (400..=600)
            .map(|k| point(k, -((k as f64) - 500.0).abs()))
            .collect();
        assert_eq!(peak[argmax_first(&peak).unwrap()].k, 500);
        let plateau = vec![point(498, 1.0), point(499, 3.0), point(500, 3.0), point(501, 2.0)];
        assert_eq!(plateau[argmax_first(&plateau).unwrap()].k, 499);
        assert!(argmax_first(&[]).is_none());
    }

    #[test]
    fn config_validation() {
        let ok = TestConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TestConfig { alpha: 0.0, ..ok.clone() },
            TestConfig { gamma: 0.5, ..ok.clone() },
            TestConfig { delta0: 2.0, ..ok.clone() },
            TestConfig { stride: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
