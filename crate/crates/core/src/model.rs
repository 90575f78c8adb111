//! Model families, the admissible parameter region and the truncated
//! intensity recursion with its first and second derivatives.
//!
//! Both families are driven by the same linear auxiliary recursion
//!
//! ```text
//! S_t = a0 + sum_i a_i S_{t-i} + sum_j b_j Y_{t-j}^delta,    lambda_t = S_t^(1/delta)
//! ```
//!
//! with `delta = 1` for the linear family. Values of `S` before `t = 1` are
//! the zero-input fixed point `a0 / (1 - sum a_i)` and pre-sample counts are
//! zero, so `lambda_1 = f_theta(0, 0, ...)`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::CountSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearIngarch,
    PowerIngarch,
}

/// Slack constants defining the admissible region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Lower bound on the intercept.
    pub c_min: f64,
    /// Required gap between the coefficient contraction sum and 1.
    pub eps_contr: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            c_min: 1e-3,
            eps_contr: 1e-3,
        }
    }
}

/// Family, lag orders and the fixed power of the intensity map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct ModelSpec {
    family: Family,
    p: usize,
    q: usize,
    delta: f64,
    #[serde(default)]
    bounds: Bounds,
}

#[derive(Deserialize)]
struct RawSpec {
    family: Family,
    p: usize,
    q: usize,
    #[serde(default = "one")]
    delta: f64,
    #[serde(default)]
    bounds: Bounds,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = match raw.family {
            Family::LinearIngarch => Self::linear(raw.p, raw.q)?,
            Family::PowerIngarch => Self::power(raw.p, raw.q, raw.delta)?,
        };
        spec.with_bounds(raw.bounds)
    }
}

impl ModelSpec {
    /// Linear INGARCH(p, q): `p` intensity lags, `q` count lags.
    pub fn linear(p: usize, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidSpec("q must be at least 1".into()));
        }
        Ok(Self {
            family: Family::LinearIngarch,
            p,
            q,
            delta: 1.0,
            bounds: Bounds::default(),
        })
    }

    /// Power INGARCH(p, q) with fixed exponent `delta >= 1`.
    pub fn power(p: usize, q: usize, delta: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidSpec("q must be at least 1".into()));
        }
        if !(delta.is_finite() && delta >= 1.0) {
            return Err(Error::InvalidSpec(format!("delta must be >= 1, got {delta}")));
        }
        Ok(Self {
            family: Family::PowerIngarch,
            p,
            q,
            delta,
            bounds: Bounds::default(),
        })
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self> {
        if !(bounds.c_min > 0.0 && bounds.eps_contr > 0.0 && bounds.eps_contr < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "bounds need c_min > 0 and 0 < eps_contr < 1, got {bounds:?}"
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Number of free parameters, `1 + p + q`.
    pub fn dim(&self) -> usize {
        1 + self.p + self.q
    }

    /// Names in parameter order: `alpha0, alpha1.., beta1..`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["alpha0".to_string()];
        names.extend((1..=self.p).map(|i| format!("alpha{i}")));
        names.extend((1..=self.q).map(|j| format!("beta{j}")));
        names
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::LinearIngarch => write!(f, "linear:{},{}", self.p, self.q),
            Family::PowerIngarch => write!(f, "power:{},{}:delta={}", self.p, self.q, self.delta),
        }
    }
}

/// Parses `family:p,q[:delta=x]` with `family` one of `linear` or `power`.
impl std::str::FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("expected family:p,q[:delta=x], got {s:?}"));
        let mut parts = s.trim().split(':');
        let family = parts.next().ok_or_else(bad)?;
        let (p, q) = parts.next().and_then(|o| o.split_once(',')).ok_or_else(bad)?;
        let p: usize = p.trim().parse().map_err(|_| bad())?;
        let q: usize = q.trim().parse().map_err(|_| bad())?;
        let delta = match parts.next() {
            None => None,
            Some(d) => Some(
                d.trim()
                    .strip_prefix("delta=")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(bad)?,
            ),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        match (family, delta) {
            ("linear", None) => Self::linear(p, q),
            ("linear", Some(d)) if d == 1.0 => Self::linear(p, q),
            ("power", Some(d)) => Self::power(p, q, d),
            ("power", None) => Err(Error::InvalidSpec("power family needs :delta=x".into())),
            _ => Err(bad()),
        }
    }
}

/// `theta = (alpha0, alpha_1..alpha_p, beta_1..beta_q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub alpha0: f64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl ParamVector {
    pub fn new(alpha0: f64, alphas: Vec<f64>, betas: Vec<f64>) -> Self {
        Self {
            alpha0,
            alphas,
            betas,
        }
    }

    /// Splits a flat vector according to the lag orders of `spec`.
    pub fn from_slice(spec: &ModelSpec, values: &[f64]) -> Result<Self> {
        if values.len() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: values.len(),
            });
        }
        Ok(Self {
            alpha0: values[0],
            alphas: values[1..1 + spec.p].to_vec(),
            betas: values[1 + spec.p..].to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.alpha0);
        v.extend_from_slice(&self.alphas);
        v.extend_from_slice(&self.betas);
        v
    }

    pub fn dim(&self) -> usize {
        1 + self.alphas.len() + self.betas.len()
    }
}

/// A single broken constraint of the admissible region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { index: usize },
    InterceptBelowMin { alpha0: f64, c_min: f64 },
    NegativeCoefficient { name: String, value: f64 },
    Contraction { sum: f64, limit: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { index } => write!(f, "component {index} is not finite"),
            Violation::InterceptBelowMin { alpha0, c_min } => {
                write!(f, "alpha0 = {alpha0} is below c_min = {c_min}")
            }
            Violation::NegativeCoefficient { name, value } => {
                write!(f, "{name} = {value} is negative")
            }
            Violation::Contraction { sum, limit } => {
                write!(f, "contraction sum {sum} exceeds {limit}")
            }
        }
    }
}

// Absorbs rounding from the optimizer's parameter transform.
const CONTRACTION_ROUNDING: f64 = 1e-12;

/// Lists every broken constraint; an empty list means `theta` is admissible.
///
/// A dimension mismatch is reported as an error, not as a violation.
pub fn check_params(spec: &ModelSpec, theta: &ParamVector) -> Result<Vec<Violation>> {
    if theta.alphas.len() != spec.p || theta.betas.len() != spec.q {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: theta.dim(),
        });
    }
    let flat = theta.to_vec();
    let mut out: Vec<Violation> = flat
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(index, _)| Violation::NonFinite { index })
        .collect();
    if !out.is_empty() {
        return Ok(out);
    }
    let Bounds { c_min, eps_contr } = spec.bounds;
    if theta.alpha0 < c_min {
        out.push(Violation::InterceptBelowMin {
            alpha0: theta.alpha0,
            c_min,
        });
    }
    let names = spec.param_names();
    for (name, &value) in names.iter().zip(&flat).skip(1) {
        if value < 0.0 {
            out.push(Violation::NegativeCoefficient {
                name: name.clone(),
                value,
            });
        }
    }
    let inv = 1.0 / spec.delta;
    let sum: f64 = flat[1..].iter().map(|c| c.max(0.0).powf(inv)).sum();
    let limit = 1.0 - eps_contr;
    if sum > limit + CONTRACTION_ROUNDING {
        out.push(Violation::Contraction { sum, limit });
    }
    Ok(out)
}

pub fn validate_params(spec: &ModelSpec, theta: &ParamVector) -> Result<()> {
    let violations = check_params(spec, theta)?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParams(violations))
    }
}

/// `lambda_1 = (alpha0 / (1 - sum alpha_i))^(1/delta)`, the intensity with an
/// all-zero history.
pub fn zero_history_intensity(spec: &ModelSpec, theta: &ParamVector) -> Result<f64> {
    validate_params(spec, theta)?;
    let asum: f64 = theta.alphas.iter().sum();
    Ok((theta.alpha0 / (1.0 - asum)).powf(1.0 / spec.delta))
}

/// Truncated intensities `lambda_t(theta)`, `t = 1..n`, and their derivatives.
#[derive(Clone, Debug)]
pub struct IntensityPath {
    pub lambdas: Vec<f64>,
    /// `n x d`, row `t` is the gradient of `lambda_t`.
    pub grads: DMatrix<f64>,
    pub hessians: Option<Vec<DMatrix<f64>>>,
}

pub fn intensity_path(
    spec: &ModelSpec,
    theta: &ParamVector,
    y: &CountSeries,
    with_hessian: bool,
) -> Result<IntensityPath> {
    validate_params(spec, theta)?;
    let data = Prepared::new(spec, y);
    let n = y.len();
    let d = spec.dim();
    let order = if with_hessian {
        Order::Hessian
    } else {
        Order::Gradient
    };
    let mut lambdas = Vec::with_capacity(n);
    let mut grads = DMatrix::zeros(n, d);
    let mut hessians = with_hessian.then(|| Vec::with_capacity(n));
    walk(spec, &theta.to_vec(), &data, n, order, |t, lam, dl, d2l| {
        lambdas.push(lam);
        for (a, &g) in dl.iter().enumerate() {
            grads[(t, a)] = g;
        }
        if let Some(h) = hessians.as_mut() {
            h.push(DMatrix::from_row_slice(d, d, d2l));
        }
    })?;
    Ok(IntensityPath {
        lambdas,
        grads,
        hessians,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Counts as floats together with `Y^delta`, built once per series.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub y: Vec<f64>,
    pub ypow: Vec<f64>,
}

impl Prepared {
    pub fn new(spec: &ModelSpec, series: &CountSeries) -> Self {
        let y = series.as_f64();
        let delta = spec.delta;
        let ypow = if delta == 1.0 {
            y.clone()
        } else if delta == 2.0 {
            y.iter().map(|v| v * v).collect()
        } else {
            y.iter().map(|v| v.powf(delta)).collect()
        };
        Self { y, ypow }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }
}

/// Runs the recursion for `t = 0..upto` (0-based) and calls
/// `visit(t, lambda_t, grad, hessian_row_major)`. Derivative slices are
/// empty when not requested. `theta` must be admissible.
pub(crate) fn walk<F>(
    spec: &ModelSpec,
    theta: &[f64],
    data: &Prepared,
    upto: usize,
    order: Order,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64], &[f64]),
{
    let p = spec.p;
    let q = spec.q;
    let d = 1 + p + q;
    let a0 = theta[0];
    let alphas = &theta[1..1 + p];
    let betas = &theta[1 + p..];
    let ypow = &data.ypow;

    let gap = 1.0 - alphas.iter().sum::<f64>();
    let s_star = a0 / gap;

    let want_grad = order >= Order::Gradient;
    let want_hess = order >= Order::Hessian;
    let gd = if want_grad { d } else { 0 };
    let hd = if want_hess { d * d } else { 0 };

    // Ring buffers over the last p steps; slot(tau) = tau mod p.
    let mut s_hist = vec![s_star; p];
    let mut ds_hist = vec![0.0; p * gd];
    let mut d2_hist = vec![0.0; p * hd];
    if want_grad {
        let mut ds_star = vec![0.0; d];
        ds_star[0] = 1.0 / gap;
        for v in &mut ds_star[1..=p] {
            *v = a0 / (gap * gap);
        }
        for slot in 0..p {
            ds_hist[slot * d..(slot + 1) * d].copy_from_slice(&ds_star);
        }
    }
    if want_hess {
        let mut d2_star = vec![0.0; d * d];
        for i in 1..=p {
            d2_star[i] = 1.0 / (gap * gap);
            d2_star[i * d] = 1.0 / (gap * gap);
            for j in 1..=p {
                d2_star[i * d + j] = 2.0 * a0 / (gap * gap * gap);
            }
        }
        for slot in 0..p {
            d2_hist[slot * d * d..(slot + 1) * d * d].copy_from_slice(&d2_star);
        }
    }

    let slot = |t: usize, lag: usize| (t + p - lag) % p;

    let mut ds = vec![0.0; gd];
    let mut d2s = vec![0.0; hd];
    let mut dl = vec![0.0; gd];
    let mut d2l = vec![0.0; hd];
    let inv_delta = 1.0 / spec.delta;
    let unit_power = spec.delta == 1.0;

    for t in 0..upto {
        let mut s = a0;
        for i in 1..=p {
            s += alphas[i - 1] * s_hist[slot(t, i)];
        }
        for j in 1..=q.min(t) {
            s += betas[j - 1] * ypow[t - j];
        }
        if !s.is_finite() {
            return Err(Error::NumericOverflow { t: t + 1 });
        }

        if want_grad {
            ds[0] = 1.0;
            for k in 1..=p {
                ds[k] = s_hist[slot(t, k)];
            }
            for j in 1..=q {
                ds[p + j] = if t >= j { ypow[t - j] } else { 0.0 };
            }
            for i in 1..=p {
                let a = alphas[i - 1];
                let row = &ds_hist[slot(t, i) * d..(slot(t, i) + 1) * d];
                for (x, r) in ds.iter_mut().zip(row) {
                    *x += a * r;
                }
            }
        }
        if want_hess {
            d2s.fill(0.0);
            for i in 1..=p {
                let a = alphas[i - 1];
                let base = slot(t, i) * d * d;
                for (x, r) in d2s.iter_mut().zip(&d2_hist[base..base + d * d]) {
                    *x += a * r;
                }
            }
            for k in 1..=p {
                let row = &ds_hist[slot(t, k) * d..(slot(t, k) + 1) * d];
                for b in 0..d {
                    d2s[k * d + b] += row[b];
                    d2s[b * d + k] += row[b];
                }
            }
        }

        let lam;
        if unit_power {
            lam = s;
            visit(t, lam, &ds, &d2s);
        } else {
            lam = s.powf(inv_delta);
            if want_grad {
                let c1 = lam * inv_delta / s;
                for (o, g) in dl.iter_mut().zip(&ds) {
                    *o = c1 * g;
                }
                if want_hess {
                    let c2 = c1 * (inv_delta - 1.0) / s;
                    for a in 0..d {
                        for b in 0..d {
                            d2l[a * d + b] = c1 * d2s[a * d + b] + c2 * ds[a] * ds[b];
                        }
                    }
                }
            }
            visit(t, lam, &dl, &d2l);
        }
        if !lam.is_finite() {
            return Err(Error::NumericOverflow { t: t + 1 });
        }

        if p > 0 {
            let here = t % p;
            s_hist[here] = s;
            if want_grad {
                ds_hist[here * d..(here + 1) * d].copy_from_slice(&ds);
            }
            if want_hess {
                d2_hist[here * d * d..(here + 1) * d * d].copy_from_slice(&d2s);
            }
        }
    }
    Ok(())
}
