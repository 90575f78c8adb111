//! Conditional maximum likelihood on a segment.
//!
//! The optimizer works on an unconstrained scale:
//!
//! * `alpha0 = c_min + exp(z0)`;
//! * the coefficient roots `r_i = c_i^(1/delta)` are a softmax over the
//!   coefficient logits plus an implicit slack logit 0, scaled by
//!   `1 - eps_contr`, so every `z` maps to an admissible `theta`.
//!
//! Steps are Newton steps on the mean log-likelihood with curvature
//! `J' N J`, where `N` is the analytic negative Hessian in `theta` and `J` the
//! transform Jacobian, followed by an Armijo backtracking line search. When
//! `J' N J` is not positive definite the information matrix is used instead.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Derivatives, Evaluator, RawEval};
use crate::linalg::{serde_matrix, sym_inverse};
use crate::model::{validate_params, Bounds, ModelSpec, ParamVector, Prepared};
use crate::rng::{stream, Role};
use crate::series::{CountSeries, Segment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub init: Option<ParamVector>,
    /// Extra jittered starts after the first one.
    pub restarts: usize,
    /// Sup-norm tolerance on the gradient of the mean log-likelihood on the
    /// transformed scale.
    pub g_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            restarts: 3,
            g_tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

impl FitOptions {
    /// Single start from `init`, no jittered restarts.
    pub fn warm(init: ParamVector) -> Self {
        Self {
            init: Some(init),
            restarts: 0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub loglik: f64,
    pub segment: Segment,
    /// `-(1/|T|) d^2 L / d theta d theta'` at the optimum.
    #[serde(with = "serde_matrix")]
    pub sigma_hessian: DMatrix<f64>,
    /// `(1/|T|) sum_t grad(lambda) grad(lambda)' / lambda` at the optimum.
    #[serde(with = "serde_matrix")]
    pub sigma_score: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Final sup-norm of the transformed-scale gradient.
    pub grad_norm: f64,
    /// `sigma_score` was singular and a pseudo-inverse gave the standard errors.
    pub pseudo_inverse: bool,
}

impl FitResult {
    pub fn theta_vec(&self) -> Vec<f64> {
        self.theta_hat.to_vec()
    }
}

/// Both covariance estimators at a given parameter.
#[derive(Clone, Debug)]
pub struct Covariance {
    pub sigma_hessian: DMatrix<f64>,
    pub sigma_score: DMatrix<f64>,
    pub singular: bool,
}

pub fn fit_mle(spec: &ModelSpec, y: &CountSeries, seg: Segment, opts: &FitOptions) -> Result<FitResult> {
    seg.check(y.len())?;
    let data = Prepared::new(spec, y);
    fit_prepared(spec, &data, seg, opts)
}

pub fn covariance_estimates(
    spec: &ModelSpec,
    y: &CountSeries,
    seg: Segment,
    theta_hat: &ParamVector,
) -> Result<Covariance> {
    validate_params(spec, theta_hat)?;
    seg.check(y.len())?;
    let data = Prepared::new(spec, y);
    let raw = Evaluator::new(spec, &data, seg).eval(&theta_hat.to_vec(), Derivatives::Full)?;
    let m = seg.len() as f64;
    let d = spec.dim();
    let sigma_hessian = DMatrix::from_row_slice(d, d, &raw.neg_hessian) / m;
    let sigma_score = DMatrix::from_row_slice(d, d, &raw.score_outer) / m;
    let singular = sym_inverse(&sigma_score).1;
    Ok(Covariance {
        sigma_hessian,
        sigma_score,
        singular,
    })
}

/// Moment-matching start: every coefficient 0.1 and the intercept chosen so
/// the implied stationary level of `S` matches the sample mean of `Y^delta`.
pub fn method_of_moments(spec: &ModelSpec, y: &CountSeries, seg: Segment) -> Result<ParamVector> {
    seg.check(y.len())?;
    let data = Prepared::new(spec, y);
    Ok(ParamVector::from_slice(spec, &moment_start(spec, &data, seg))?)
}

pub(crate) fn fit_prepared(
    spec: &ModelSpec,
    data: &Prepared,
    seg: Segment,
    opts: &FitOptions,
) -> Result<FitResult> {
    seg.check(data.len())?;
    let min = 5 * spec.dim();
    if seg.len() < min {
        return Err(Error::WindowTooShort { len: seg.len(), min });
    }
    if let Some(init) = &opts.init {
        validate_params(spec, init)?;
    }
    let eval = Evaluator::new(spec, data, seg);
    if data.y[..seg.hi].iter().all(|&v| v == 0.0) {
        return degenerate_fit(spec, &eval);
    }

    let tr = Transform::new(spec);
    let base = moment_start(spec, data, seg);
    let mut starts = vec![tr.inverse(&opts.init.as_ref().map_or_else(|| base.clone(), |p| p.to_vec()))];
    if opts.restarts > 0 {
        let centre = tr.inverse(&base);
        let mut rng = stream(opts.seed, seg.lo as u64 * 1_000_003 + seg.hi as u64, 0, Role::Jitter);
        let noise = Normal::new(0.0, 0.6).expect("valid sd");
        for _ in 0..opts.restarts {
            starts.push(centre.iter().map(|c| c + noise.sample(&mut rng)).collect());
        }
    }

    let mut best: Option<Trial> = None;
    let mut best_converged: Option<Trial> = None;
    let mut last_err = None;
    for z in starts {
        match ascend(&eval, &tr, z, opts) {
            Ok(trial) => {
                if trial.converged
                    && best_converged.as_ref().is_none_or(|b| trial.raw.value > b.raw.value)
                {
                    best_converged = Some(trial.clone());
                }
                if best.as_ref().is_none_or(|b| trial.raw.value > b.raw.value) {
                    best = Some(trial);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let restarts_used = opts.restarts;
    match (best_converged, best) {
        (Some(t), _) => Ok(finish(spec, seg, t, restarts_used)),
        (None, Some(t)) => Err(Error::NotConverged {
            best: Box::new(finish(spec, seg, t, restarts_used)),
        }),
        (None, None) => Err(Error::FitFailed {
            lo: seg.lo,
            hi: seg.hi,
            reason: last_err.map_or_else(|| "no start succeeded".into(), |e| e.to_string()),
        }),
    }
}

fn finish(spec: &ModelSpec, seg: Segment, t: Trial, restarts_used: usize) -> FitResult {
    let d = spec.dim();
    let m = seg.len() as f64;
    let sigma_hessian = DMatrix::from_row_slice(d, d, &t.raw.neg_hessian) / m;
    let sigma_score = DMatrix::from_row_slice(d, d, &t.raw.score_outer) / m;
    let (inv, pseudo_inverse) = sym_inverse(&sigma_score);
    let std_errors = (0..d).map(|i| (inv[(i, i)].max(0.0) / m).sqrt()).collect();
    FitResult {
        theta_hat: ParamVector::from_slice(spec, &t.theta).expect("dimension"),
        loglik: t.raw.value,
        segment: seg,
        sigma_hessian,
        sigma_score,
        std_errors,
        converged: t.converged,
        iterations: t.iterations,
        restarts_used,
        grad_norm: t.grad_norm,
        pseudo_inverse,
    }
}

// With every count up to the segment end equal to zero the likelihood is
// decreasing in every lambda_t, so the maximum sits at the smallest
// intercept with all coefficients zero.
fn degenerate_fit(spec: &ModelSpec, eval: &Evaluator<'_>) -> Result<FitResult> {
    let mut theta = vec![0.0; spec.dim()];
    theta[0] = spec.bounds().c_min;
    let raw = eval.eval(&theta, Derivatives::Full)?;
    Ok(finish(
        spec,
        eval.segment(),
        Trial {
            theta,
            raw,
            iterations: 0,
            converged: true,
            grad_norm: 0.0,
        },
        0,
    ))
}

fn moment_start(spec: &ModelSpec, data: &Prepared, seg: Segment) -> Vec<f64> {
    let m = spec.p() + spec.q();
    let delta = spec.delta();
    let Bounds { c_min, eps_contr } = spec.bounds();
    let mut coef = 0.1f64;
    let root_sum = m as f64 * coef.powf(1.0 / delta);
    let cap = 0.5 * (1.0 - eps_contr);
    if root_sum > cap {
        coef = (cap / m as f64).powf(delta);
    }
    let mean = data.ypow[seg.range()].iter().sum::<f64>() / seg.len() as f64;
    let alpha0 = (mean * (1.0 - m as f64 * coef)).max(10.0 * c_min);
    let mut theta = vec![coef; 1 + m];
    theta[0] = alpha0;
    theta
}

#[derive(Clone, Debug)]
struct Trial {
    theta: Vec<f64>,
    raw: RawEval,
    iterations: usize,
    converged: bool,
    grad_norm: f64,
}

const MAX_STEP: f64 = 5.0;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
// Gradient level below which a stalled line search is attributed to
// floating-point resolution rather than a failed fit.
const STALL_GRAD: f64 = 1e-5;

fn ascend(eval: &Evaluator<'_>, tr: &Transform, z0: Vec<f64>, opts: &FitOptions) -> Result<Trial> {
    let d = tr.dim();
    let inv_n = 1.0 / eval.segment().len() as f64;
    let mut z = z0;
    let mut theta = tr.theta(&z);
    let mut raw = eval.eval(&theta, Derivatives::Full)?;
    let mut grad_norm = f64::INFINITY;

    for iter in 0..opts.max_iter {
        let jac = tr.jacobian(&z);
        let g_theta = DVector::from_column_slice(&raw.score) * inv_n;
        let g = jac.transpose() * &g_theta;
        grad_norm = g.amax();
        if grad_norm <= opts.g_tol {
            return Ok(Trial {
                theta,
                raw,
                iterations: iter,
                converged: true,
                grad_norm,
            });
        }

        // Coordinates pinned at the boundary and still pushed outward are
        // held fixed. Their curvature vanishes, so leaving them in the
        // Newton system swamps the step for everything else.
        let free: Vec<usize> = (0..d).filter(|&i| !tr.pinned(&z, i) || g[i] > 0.0).collect();
        let r = free.len();
        let curvature = |m: &[f64]| {
            let mat = DMatrix::from_row_slice(d, d, m) * inv_n;
            let full = jac.transpose() * mat * &jac;
            DMatrix::from_fn(r, r, |a, b| full[(free[a], free[b])])
        };
        let g_free = DVector::from_fn(r, |a, _| g[free[a]]);
        let h = curvature(&raw.neg_hessian);
        let reduced = match h.cholesky() {
            Some(ch) => ch.solve(&g_free),
            None => {
                let mut info = curvature(&raw.score_outer);
                let ridge = 1e-8 * (1.0 + info.trace() / r.max(1) as f64);
                for i in 0..r {
                    info[(i, i)] += ridge;
                }
                match info.cholesky() {
                    Some(ch) => ch.solve(&g_free),
                    None => g_free.clone(),
                }
            }
        };
        let mut step = DVector::zeros(d);
        for (a, &i) in free.iter().enumerate() {
            step[i] = reduced[a];
        }
        let big = step.amax();
        if big > MAX_STEP {
            step *= MAX_STEP / big;
        }
        let slope = g.dot(&step);
        let f0 = raw.value * inv_n;
        let near = grad_norm < 1e-4;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let zc: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let thc = tr.theta(&zc);
            if let Ok(rc) = eval.eval(&thc, Derivatives::Full) {
                let fc = rc.value * inv_n;
                let armijo = fc >= f0 + ARMIJO * t * slope;
                let rounding = near && t == 1.0 && fc >= f0 - 1e-13 * f0.abs().max(1.0);
                if fc.is_finite() && (armijo || rounding) {
                    accepted = Some((zc, thc, rc));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((zc, thc, rc)) => {
                z = zc;
                theta = thc;
                raw = rc;
            }
            None => {
                return Ok(Trial {
                    theta,
                    raw,
                    iterations: iter,
                    converged: grad_norm <= STALL_GRAD,
                    grad_norm,
                });
            }
        }
    }
    Ok(Trial {
        theta,
        raw,
        iterations: opts.max_iter,
        converged: grad_norm <= opts.g_tol,
        grad_norm,
    })
}

/// Map between the unconstrained scale `z` and `theta`.
#[derive(Clone, Debug)]
pub(crate) struct Transform {
    m: usize,
    delta: f64,
    c_min: f64,
    scale: f64,
}

const Z_MAX: f64 = 40.0;
const FLOOR: f64 = 1e-12;

impl Transform {
    pub fn new(spec: &ModelSpec) -> Self {
        let b = spec.bounds();
        Self {
            m: spec.p() + spec.q(),
            delta: spec.delta(),
            c_min: b.c_min,
            scale: 1.0 - b.eps_contr,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.m
    }

    fn weights(&self, z: &[f64]) -> Vec<f64> {
        let logits = &z[1..];
        let top = logits.iter().fold(0.0f64, |a, &b| a.max(b));
        let slack = (-top).exp();
        let e: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
        let total = slack + e.iter().sum::<f64>();
        e.into_iter().map(|v| v / total).collect()
    }

    /// Coordinate `i` sits at its lower bound to working precision.
    fn pinned(&self, z: &[f64], i: usize) -> bool {
        const TINY: f64 = 1e-10;
        if i == 0 {
            z[0] < TINY.ln()
        } else {
            self.weights(z)[i - 1] < TINY
        }
    }

    pub fn theta(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(self.c_min + z[0].min(Z_MAX).exp());
        out.extend(
            self.weights(z)
                .into_iter()
                .map(|w| (self.scale * w).powf(self.delta)),
        );
        out
    }

    /// `J[i][k] = d theta_i / d z_k`.
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        jac[(0, 0)] = if z[0] < Z_MAX { z[0].exp() } else { 0.0 };
        let w = self.weights(z);
        for i in 0..self.m {
            let r = self.scale * w[i];
            let outer = self.delta * r.powf(self.delta - 1.0) * self.scale * w[i];
            for k in 0..self.m {
                let kron = if i == k { 1.0 } else { 0.0 };
                jac[(i + 1, k + 1)] = outer * (kron - w[k]);
            }
        }
        jac
    }

    pub fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.push((theta[0] - self.c_min).max(FLOOR).ln());
        let mut w: Vec<f64> = theta[1..]
            .iter()
            .map(|c| (c.max(0.0).powf(1.0 / self.delta) / self.scale).max(FLOOR))
            .collect();
        let total: f64 = w.iter().sum();
        if total > 1.0 - FLOOR {
            let shrink = (1.0 - 1e-6) / total;
            w.iter_mut().for_each(|v| *v *= shrink);
        }
        let slack = (1.0 - w.iter().sum::<f64>()).max(FLOOR);
        z.extend(w.iter().map(|v| (v / slack).ln()));
        z
    }
}
