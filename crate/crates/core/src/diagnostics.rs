//! Residual diagnostics and a kernel-weighted goodness-of-fit test.
//!
//! With `I_t = (lambda_t, Y_t)` and Pearson residuals `xi_t`,
//!
//! ```text
//! G(x) = n^{-1/2} sum_{t=1}^n xi_t K((x1 - lambda_{t-1}) / h1) K((x2 - Y_{t-1}) / h2)
//! T    = max_{x in grid} |G(x)|
//! ```
//!
//! `I_0` uses the pre-sample conventions of the likelihood: the zero-history
//! intensity and a zero count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_mle, FitOptions};
use crate::likelihood::intensities;
use crate::model::{zero_history_intensity, ModelSpec, ParamVector};
use crate::series::CountSeries;
use crate::study::{simulate_keyed, ChangeScenario};

/// Compactly supported kernels, scaled so that `K(0) = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Uniform,
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Uniform => {
                if u.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Epanechnikov => (1.0 - u * u).max(0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalGrid {
    /// The observed points `I_0, ..., I_{n-1}`.
    #[default]
    DataDriven,
    Points(Vec<[f64; 2]>),
}

fn default_bootstrap() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    #[serde(default)]
    pub kernel: Kernel,
    /// `(h1, h2)`; `None` uses each coordinate's standard deviation times
    /// `n^{-1/5}`.
    #[serde(default)]
    pub bandwidth: Option<[f64; 2]>,
    #[serde(default)]
    pub eval_grid: EvalGrid,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GofConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Uniform,
            bandwidth: None,
            eval_grid: EvalGrid::DataDriven,
            bootstrap: default_bootstrap(),
            seed: 0,
        }
    }
}

impl GofConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.bandwidth {
            if !h.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h:?}")));
            }
        }
        if let EvalGrid::Points(p) = &self.eval_grid {
            if p.is_empty() {
                return Err(Error::Config("evaluation grid is empty".into()));
            }
        }
        Ok(())
    }
}

pub const GOF_MIN_LEN: usize = 50;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GofStatistic {
    pub value: f64,
    pub bandwidth: [f64; 2],
    pub grid: Vec<[f64; 2]>,
    /// `G` at each grid point.
    pub g_values: Vec<f64>,
}

fn std_dev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(lagged points I_{t-1}, residuals xi_t)` for `t = 1..n`.
fn lagged_points(spec: &ModelSpec, theta: &ParamVector, y: &CountSeries) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let lam = intensities(spec, theta, y)?;
    let mut points = Vec::with_capacity(y.len());
    points.push([zero_history_intensity(spec, theta)?, 0.0]);
    for t in 0..y.len() - 1 {
        points.push([lam[t], y.counts()[t] as f64]);
    }
    let xi = lam
        .iter()
        .zip(y.counts())
        .map(|(&l, &c)| (c as f64 - l) / l.sqrt())
        .collect();
    Ok((points, xi))
}

/// Kernel sum `G(x)` over all grid points; the lagged points are sorted by
/// their first coordinate so only the support window is scanned.
fn g_map(points: &[[f64; 2]], xi: &[f64], grid: &[[f64; 2]], h: [f64; 2], kernel: Kernel) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    let sorted: Vec<([f64; 2], f64)> = order.iter().map(|&i| (points[i], xi[i])).collect();
    let scale = 1.0 / (points.len() as f64).sqrt();
    // Slightly wider than the support; the kernel itself decides the edge.
    let reach = h[0] * (1.0 + 1e-9);
    grid.iter()
        .map(|x| {
            let start = sorted.partition_point(|(p, _)| p[0] < x[0] - reach);
            let mut acc = 0.0;
            for (p, r) in &sorted[start..] {
                if p[0] > x[0] + reach {
                    break;
                }
                let w2 = kernel.eval((x[1] - p[1]) / h[1]);
                if w2 != 0.0 {
                    acc += r * kernel.eval((x[0] - p[0]) / h[0]) * w2;
                }
            }
            acc * scale
        })
        .collect()
}

/// Goodness-of-fit statistic at a fitted parameter.
pub fn gof_statistic(
    spec: &ModelSpec,
    theta_hat: &ParamVector,
    y: &CountSeries,
    config: &GofConfig,
) -> Result<GofStatistic> {
    config.validate()?;
    let n = y.len();
    if n < GOF_MIN_LEN {
        return Err(Error::SeriesTooShort { n, min: GOF_MIN_LEN });
    }
    let (points, xi) = lagged_points(spec, theta_hat, y)?;
    let bandwidth = match config.bandwidth {
        Some(h) => h,
        None => {
            let shrink = (n as f64).powf(-0.2);
            let mut h = [0.0; 2];
            for (c, hc) in h.iter_mut().enumerate() {
                let s = std_dev(points.iter().map(|p| p[c]));
                *hc = if s > 0.0 { s * shrink } else { shrink };
            }
            h
        }
    };
    let grid = match &config.eval_grid {
        EvalGrid::DataDriven => points.clone(),
        EvalGrid::Points(p) => p.clone(),
    };
    let g_values = g_map(&points, &xi, &grid, bandwidth, config.kernel);
    let value = g_values.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok(GofStatistic {
        value,
        bandwidth,
        grid,
        g_values,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GofReport {
    /// Always `"parametric_bootstrap"`.
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub bootstrap: usize,
    pub failed: usize,
    pub bandwidth: [f64; 2],
    pub kernel: Kernel,
    pub theta_hat: Vec<f64>,
}

/// Parametric bootstrap p-value: simulate from `theta_hat`, refit, recompute
/// the statistic with the same kernel and bandwidth rule.
/// `p = (1 + #{T* >= T}) / (1 + B)` over successful replicates.
pub fn gof_bootstrap(
    spec: &ModelSpec,
    theta_hat: &ParamVector,
    y: &CountSeries,
    config: &GofConfig,
) -> Result<GofReport> {
    let observed = gof_statistic(spec, theta_hat, y, config)?;
    if config.bootstrap == 0 {
        return Err(Error::Config("bootstrap replications must be positive".into()));
    }
    let scenario = ChangeScenario::stationary(spec.clone(), theta_hat.clone(), y.len(), config.seed);
    let replicate = |b: usize| -> Result<f64> {
        let ystar = simulate_keyed(&scenario, config.seed, u64::MAX, b as u64)?;
        let fit = fit_mle(spec, &ystar, ystar.full(), &FitOptions::warm(theta_hat.clone()))?;
        Ok(gof_statistic(spec, &fit.theta_hat, &ystar, config)?.value)
    };
    let stars: Vec<Option<f64>> = (0..config.bootstrap)
        .into_par_iter()
        .map(|b| replicate(b).ok())
        .collect();
    let ok: Vec<f64> = stars.iter().flatten().copied().collect();
    let failed = stars.len() - ok.len();
    if failed * 20 > stars.len() {
        return Err(Error::TooManySkipped {
            skipped: failed,
            total: stars.len(),
        });
    }
    let exceed = ok.iter().filter(|&&t| t >= observed.value).count();
    Ok(GofReport {
        method: "parametric_bootstrap".into(),
        statistic: observed.value,
        p_value: (1 + exceed) as f64 / (1 + ok.len()) as f64,
        bootstrap: ok.len(),
        failed,
        bandwidth: observed.bandwidth,
        kernel: config.kernel,
        theta_hat: theta_hat.to_vec(),
    })
}

/// Sample autocorrelations at lags `0..=max_lag`.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptySeries);
    }
    if 2 * max_lag >= n {
        return Err(Error::Config(format!(
            "max_lag = {max_lag} must be below n / 2 = {}",
            n / 2
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    if c0 <= 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((0..=max_lag)
        .map(|l| c[l..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Mean of `xi_t^2`; close to 1 under a correct model.
    pub mean_square: f64,
    pub min: f64,
    pub max: f64,
    pub acf: Vec<f64>,
}

pub fn residual_summary(residuals: &[f64], max_lag: usize) -> Result<ResidualSummary> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { n, min: 2 });
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let variance = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(ResidualSummary {
        n,
        mean,
        variance,
        mean_square: residuals.iter().map(|r| r * r).sum::<f64>() / n as f64,
        min: residuals.iter().copied().fold(f64::INFINITY, f64::min),
        max: residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        acf: acf(residuals, max_lag.min((n - 1) / 2))?,
    })
}

/// `t, y, lambda, residual` rows.
pub fn write_residuals_csv<W: Write>(y: &CountSeries, lambdas: &[f64], residuals: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "t,y,lambda,residual")?;
    for (t, ((c, l), r)) in y.counts().iter().zip(lambdas).zip(residuals).enumerate() {
        writeln!(w, "{},{c},{l},{r}", t + 1)?;
    }
    Ok(())
}

pub fn write_acf_csv<W: Write>(acf: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "lag,acf")?;
    for (l, v) in acf.iter().enumerate() {
        writeln!(w, "{l},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::linear(0, 1).unwrap()
    }

    #[test]
    fn kernels_are_one_at_zero_and_vanish_outside() {
        for k in [Kernel::Uniform, Kernel::Epanechnikov] {
            assert_eq!(k.eval(0.0), 1.0);
            assert_eq!(k.eval(1.01), 0.0);
            assert_eq!(k.eval(-3.0), 0.0);
        }
        assert_eq!(Kernel::Uniform.eval(1.0), 1.0);
        assert!((Kernel::Epanechnikov.eval(0.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn neighbour_search_matches_brute_force() {
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|i| [((i * 37) % 101) as f64 / 10.0, ((i * 13) % 7) as f64])
            .collect();
        let xi: Vec<f64> = (0..200).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let h = [0.8, 1.5];
        for k in [Kernel::Uniform, Kernel::Epanechnikov] {
            let fast = g_map(&pts, &xi, &pts, h, k);
            for (x, g) in pts.iter().zip(&fast) {
                let brute: f64 = pts
                    .iter()
                    .zip(&xi)
                    .map(|(p, r)| r * k.eval((x[0] - p[0]) / h[0]) * k.eval((x[1] - p[1]) / h[1]))
                    .sum::<f64>()
                    / 200f64.sqrt();
                assert!((g - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn huge_bandwidth_collapses_to_residual_sum() {
        let y = CountSeries::new((0..100).map(|i| (i % 5) as u64).collect()).unwrap();
        let th = ParamVector::new(1.5, vec![], vec![0.3]);
        let cfg = GofConfig {
            bandwidth: Some([1e9, 1e9]),
            ..GofConfig::default()
        };
        let g = gof_statistic(&spec(), &th, &y, &cfg).unwrap();
        let lam = intensities(&spec(), &th, &y).unwrap();
        let total: f64 = lam
            .iter()
            .zip(y.counts())
            .map(|(l, &c)| (c as f64 - l) / l.sqrt())
            .sum::<f64>()
            / 10.0;
        for v in &g.g_values {
            assert!((v - total).abs() < 1e-12);
        }
        assert!((g.value - total.abs()).abs() < 1e-12);
    }

    #[test]
    fn empty_grid_and_short_series_are_errors() {
        let th = ParamVector::new(1.0, vec![], vec![0.2]);
        let y = CountSeries::new(vec![1; 100]).unwrap();
        let cfg = GofConfig {
            eval_grid: EvalGrid::Points(vec![]),
            ..GofConfig::default()
        };
        assert!(gof_statistic(&spec(), &th, &y, &cfg).is_err());
        let short = CountSeries::new(vec![1; 20]).unwrap();
        assert!(matches!(
            gof_statistic(&spec(), &th, &short, &GofConfig::default()),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn acf_basics() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0, 4.0, 1.0, 0.0];
        let r = acf(&x, 3).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(matches!(acf(&[2.0; 10], 2), Err(Error::ConstantSeries)));
        assert!(acf(&x, 4).is_err());
    }
}
