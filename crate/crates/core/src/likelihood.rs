//! Truncated conditional Poisson log-likelihood on a segment, with score,
//! Hessian and the score outer-product information matrix.
//!
//! The constant `-log(Y_t!)` is dropped throughout. The recursion always
//! starts at `t = 1` of the full record, even when the segment starts later.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{validate_params, walk, ModelSpec, Order, ParamVector, Prepared};
use crate::series::{CountSeries, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Derivatives {
    None,
    Score,
    Full,
}

/// `L(T, theta)` and, on request, its derivatives.
#[derive(Clone, Debug)]
pub struct LikelihoodEval {
    pub value: f64,
    pub score: Option<DVector<f64>>,
    /// `-d^2 L / d theta d theta'`.
    pub neg_hessian: Option<DMatrix<f64>>,
    /// `sum_t (1 / lambda_t) grad(lambda_t) grad(lambda_t)'`.
    pub score_outer: Option<DMatrix<f64>>,
}

pub fn loglik(
    spec: &ModelSpec,
    theta: &ParamVector,
    y: &CountSeries,
    seg: Segment,
    derivs: Derivatives,
) -> Result<LikelihoodEval> {
    validate_params(spec, theta)?;
    seg.check(y.len())?;
    let data = Prepared::new(spec, y);
    Ok(Evaluator::new(spec, &data, seg).eval(&theta.to_vec(), derivs)?.into_eval())
}

pub fn score(
    spec: &ModelSpec,
    theta: &ParamVector,
    y: &CountSeries,
    seg: Segment,
) -> Result<DVector<f64>> {
    Ok(loglik(spec, theta, y, seg, Derivatives::Score)?
        .score
        .expect("score requested"))
}

/// Per-observation score contributions `(Y_t / lambda_t - 1) grad(lambda_t)`,
/// one row per `t` in `seg`.
pub fn score_terms(
    spec: &ModelSpec,
    theta: &ParamVector,
    y: &CountSeries,
    seg: Segment,
) -> Result<DMatrix<f64>> {
    validate_params(spec, theta)?;
    seg.check(y.len())?;
    let data = Prepared::new(spec, y);
    let d = spec.dim();
    let mut out = DMatrix::zeros(seg.len(), d);
    let lo = seg.lo - 1;
    walk(spec, &theta.to_vec(), &data, seg.hi, Order::Gradient, |t, lam, dl, _| {
        if t >= lo {
            let r = data.y[t] / lam - 1.0;
            for a in 0..d {
                out[(t - lo, a)] = r * dl[a];
            }
        }
    })?;
    Ok(out)
}

/// `(Y_t - lambda_t) / sqrt(lambda_t)` for `t = 1..n`.
pub fn pearson_residuals(
    spec: &ModelSpec,
    theta: &ParamVector,
    y: &CountSeries,
) -> Result<Vec<f64>> {
    Ok(intensities(spec, theta, y)?
        .iter()
        .zip(y.counts())
        .map(|(&lam, &c)| (c as f64 - lam) / lam.sqrt())
        .collect())
}

/// Truncated intensities only; cheaper than a full `intensity_path`.
pub fn intensities(spec: &ModelSpec, theta: &ParamVector, y: &CountSeries) -> Result<Vec<f64>> {
    validate_params(spec, theta)?;
    let data = Prepared::new(spec, y);
    let mut out = Vec::with_capacity(y.len());
    walk(spec, &theta.to_vec(), &data, y.len(), Order::Value, |_, lam, _, _| {
        out.push(lam)
    })?;
    Ok(out)
}

/// Raw accumulation in flat buffers; `score`, `neg_hessian` and
/// `score_outer` are empty when not requested.
#[derive(Clone, Debug)]
pub(crate) struct RawEval {
    pub d: usize,
    pub value: f64,
    pub score: Vec<f64>,
    pub neg_hessian: Vec<f64>,
    pub score_outer: Vec<f64>,
}

impl RawEval {
    pub fn into_eval(self) -> LikelihoodEval {
        let d = self.d;
        LikelihoodEval {
            value: self.value,
            score: (!self.score.is_empty()).then(|| DVector::from_vec(self.score)),
            neg_hessian: (!self.neg_hessian.is_empty())
                .then(|| DMatrix::from_row_slice(d, d, &self.neg_hessian)),
            score_outer: (!self.score_outer.is_empty())
                .then(|| DMatrix::from_row_slice(d, d, &self.score_outer)),
        }
    }
}

/// Repeated evaluation of one segment, as used by the optimizer. `theta` is
/// assumed admissible.
pub(crate) struct Evaluator<'a> {
    spec: &'a ModelSpec,
    data: &'a Prepared,
    seg: Segment,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a Prepared, seg: Segment) -> Self {
        Self { spec, data, seg }
    }

    pub fn segment(&self) -> Segment {
        self.seg
    }

    pub fn eval(&self, theta: &[f64], derivs: Derivatives) -> Result<RawEval> {
        let d = self.spec.dim();
        let order = match derivs {
            Derivatives::None => Order::Value,
            Derivatives::Score => Order::Gradient,
            Derivatives::Full => Order::Hessian,
        };
        let full = derivs == Derivatives::Full;
        let mut value = 0.0;
        let mut score = vec![0.0; if order >= Order::Gradient { d } else { 0 }];
        let mut neg_hessian = vec![0.0; if full { d * d } else { 0 }];
        let mut score_outer = vec![0.0; if full { d * d } else { 0 }];
        let lo = self.seg.lo - 1;
        let ys = &self.data.y;
        walk(self.spec, theta, self.data, self.seg.hi, order, |t, lam, dl, d2l| {
            if t < lo {
                return;
            }
            let y = ys[t];
            value += if y > 0.0 { y * lam.ln() } else { 0.0 } - lam;
            if order == Order::Value {
                return;
            }
            let r = y / lam - 1.0;
            for (s, g) in score.iter_mut().zip(dl) {
                *s += r * g;
            }
            if full {
                let w_outer = 1.0 / lam;
                let w_curv = y / (lam * lam);
                for a in 0..d {
                    for b in a..d {
                        let gg = dl[a] * dl[b];
                        score_outer[a * d + b] += w_outer * gg;
                        neg_hessian[a * d + b] += w_curv * gg - r * d2l[a * d + b];
                    }
                }
            }
        })?;
        if full {
            for a in 0..d {
                for b in 0..a {
                    score_outer[a * d + b] = score_outer[b * d + a];
                    neg_hessian[a * d + b] = neg_hessian[b * d + a];
                }
            }
        }
        Ok(RawEval {
            d,
            value,
            score,
            neg_hessian,
            score_outer,
        })
    }
}
