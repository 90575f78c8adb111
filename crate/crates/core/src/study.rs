//! Simulation of piecewise-stationary series and replication studies of
//! the change-point tests.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{analyze, Statistic, TestConfig, TestReport};
use crate::error::{Error, Result};
use crate::model::{validate_params, ModelSpec, ParamVector};
use crate::nulldist::CriticalValues;
use crate::rng::{stream, Role};
use crate::series::CountSeries;

/// One regime, active up to `floor(n * tau_end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub tau_end: f64,
    pub theta: ParamVector,
}

fn default_burn_in() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeScenario {
    #[serde(default)]
    pub name: String,
    pub spec: ModelSpec,
    pub regimes: Vec<Regime>,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ChangeScenario {
    pub fn stationary(spec: ModelSpec, theta: ParamVector, n: usize, seed: u64) -> Self {
        Self {
            name: String::new(),
            spec,
            regimes: vec![Regime { tau_end: 1.0, theta }],
            n,
            burn_in: default_burn_in(),
            seed,
        }
    }

    /// `changes` lists `(tau, theta)` pairs: `theta` takes over after
    /// `floor(n * tau)`.
    pub fn with_changes(
        spec: ModelSpec,
        theta0: ParamVector,
        changes: Vec<(f64, ParamVector)>,
        n: usize,
        seed: u64,
    ) -> Self {
        let mut regimes = Vec::with_capacity(changes.len() + 1);
        let mut current = theta0;
        for (tau, theta) in changes {
            regimes.push(Regime {
                tau_end: tau,
                theta: std::mem::replace(&mut current, theta),
            });
        }
        regimes.push(Regime {
            tau_end: 1.0,
            theta: current,
        });
        Self {
            name: String::new(),
            spec,
            regimes,
            n,
            burn_in: default_burn_in(),
            seed,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::EmptySeries);
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("scenario needs at least one regime".into()));
        }
        let mut prev = 0.0;
        for r in &self.regimes {
            if !(r.tau_end > prev && r.tau_end <= 1.0) {
                return Err(Error::Config(format!(
                    "regime endpoints must increase strictly within (0, 1], got {}",
                    r.tau_end
                )));
            }
            prev = r.tau_end;
            validate_params(&self.spec, &r.theta)?;
        }
        if prev != 1.0 {
            return Err(Error::Config("last regime must end at 1".into()));
        }
        Ok(())
    }

    /// Last time index of each regime but the final one.
    pub fn breakpoints(&self) -> Vec<usize> {
        let k = self.regimes.len();
        self.regimes[..k - 1]
            .iter()
            .map(|r| (self.n as f64 * r.tau_end).floor() as usize)
            .collect()
    }
}

/// Simulates with the scenario's own seed.
pub fn simulate_series(scenario: &ChangeScenario) -> Result<CountSeries> {
    simulate_keyed(scenario, scenario.seed, 0, 0)
}

/// Simulates with streams keyed by `(master, group, index)`.
pub fn simulate_keyed(scenario: &ChangeScenario, master: u64, group: u64, index: u64) -> Result<CountSeries> {
    scenario.validate()?;
    let mut burn = stream(master, group, index, Role::BurnIn);
    let mut sample = stream(master, group, index, Role::Sample);
    let counts = simulate_with(scenario, &mut burn, &mut sample)?;
    CountSeries::new(counts)
}

struct State {
    delta: f64,
    /// `S_{t-1}, S_{t-2}, ...` newest first.
    s: Vec<f64>,
    /// `Y_{t-1}^delta, ...` newest first.
    ypow: Vec<f64>,
}

impl State {
    fn step<R: Rng>(&mut self, theta: &ParamVector, rng: &mut R, t: usize) -> Result<u64> {
        let s = theta.alpha0
            + theta.alphas.iter().zip(&self.s).map(|(a, s)| a * s).sum::<f64>()
            + theta.betas.iter().zip(&self.ypow).map(|(b, y)| b * y).sum::<f64>();
        let lambda = s.powf(1.0 / self.delta);
        let y = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|_| Error::NumericOverflow { t })?
                .sample(rng)
        } else {
            0.0
        };
        if !y.is_finite() || y >= u64::MAX as f64 {
            return Err(Error::NumericOverflow { t });
        }
        if !self.s.is_empty() {
            self.s.rotate_right(1);
            self.s[0] = s;
        }
        if !self.ypow.is_empty() {
            self.ypow.rotate_right(1);
            self.ypow[0] = y.powf(self.delta);
        }
        Ok(y as u64)
    }
}

fn simulate_with<R: Rng>(scenario: &ChangeScenario, burn: &mut R, sample: &mut R) -> Result<Vec<u64>> {
    let spec = &scenario.spec;
    let first = &scenario.regimes[0].theta;
    let s_star = first.alpha0 / (1.0 - first.alphas.iter().sum::<f64>());
    let mut state = State {
        delta: spec.delta(),
        s: vec![s_star; spec.p()],
        ypow: vec![0.0; spec.q()],
    };
    for _ in 0..scenario.burn_in {
        state.step(first, burn, 0)?;
    }
    let ends: Vec<usize> = scenario
        .regimes
        .iter()
        .map(|r| (scenario.n as f64 * r.tau_end).floor() as usize)
        .collect();
    let mut regime = 0;
    let mut out = Vec::with_capacity(scenario.n);
    for t in 1..=scenario.n {
        while regime + 1 < ends.len() && t > ends[regime] {
            regime += 1;
        }
        out.push(state.step(&scenario.regimes[regime].theta, sample, t)?);
    }
    Ok(out)
}

fn default_replications() -> usize {
    200
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<ChangeScenario>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Test settings; `alpha` and `statistic` inside are ignored.
    #[serde(default)]
    pub test: TestConfig,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
}

impl StudyConfig {
    pub fn new(scenarios: Vec<ChangeScenario>, replications: usize, master_seed: u64) -> Self {
        Self {
            scenarios,
            replications,
            alpha: default_alpha(),
            test: TestConfig::default(),
            parallelism: None,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("study has no scenarios".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::Config("parallelism must be positive".into()));
        }
        self.test_config().validate()?;
        self.scenarios.iter().try_for_each(ChangeScenario::validate)
    }

    fn test_config(&self) -> TestConfig {
        TestConfig {
            alpha: self.alpha,
            ..self.test.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub scenario: String,
    pub replication: usize,
    pub error: Option<String>,
    pub c_stat: Option<f64>,
    pub c_reject: Option<bool>,
    pub c_khat: Option<usize>,
    pub q_stat: Option<f64>,
    pub q_reject: Option<bool>,
    pub q_khat: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: usize,
    pub bin_width: usize,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn of(values: &[usize], n: usize, bins: usize) -> Self {
        let bin_width = n.div_ceil(bins).max(1);
        let mut counts = vec![0; bins];
        for &v in values {
            counts[((v.saturating_sub(1)) / bin_width).min(bins - 1)] += 1;
        }
        Self {
            lo: 1,
            bin_width,
            counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub critical_value: f64,
    pub alpha_effective: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mean: f64,
    pub median: f64,
    /// `k_hat` over rejecting replications.
    pub khat_histogram: Histogram,
    pub mean_khat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub true_breakpoints: Vec<usize>,
    pub replications: usize,
    pub failures: usize,
    /// More than 5% of replications failed.
    pub invalid: bool,
    pub c: StatSummary,
    pub q: StatSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub master_seed: u64,
    pub replications: usize,
    pub alpha: f64,
    pub scenarios: Vec<ScenarioReport>,
    pub outcomes: Vec<ReplicationOutcome>,
}

impl StudyReport {
    pub fn scenario(&self, name: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    /// Per-replication outcomes as CSV.
    pub fn write_outcomes_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "scenario,replication,c_stat,c_reject,c_khat,q_stat,q_reject,q_khat,error"
        )?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for o in &self.outcomes {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                o.scenario,
                o.replication,
                opt(o.c_stat.map(|v| v.to_string())),
                opt(o.c_reject.map(|v| v.to_string())),
                opt(o.c_khat.map(|v| v.to_string())),
                opt(o.q_stat.map(|v| v.to_string())),
                opt(o.q_reject.map(|v| v.to_string())),
                opt(o.q_khat.map(|v| v.to_string())),
                opt(o.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
            )?;
        }
        Ok(())
    }
}

/// Runs one replication: simulate, fit once, evaluate both statistics.
pub fn run_replication(
    scenario: &ChangeScenario,
    test: &TestConfig,
    crit: &dyn CriticalValues,
    master: u64,
    group: u64,
    index: u64,
) -> Result<(TestReport, TestReport)> {
    let y = simulate_keyed(scenario, master, group, index)?;
    let analysis = analyze(&scenario.spec, &y, test)?;
    Ok((
        analysis.report(Statistic::C, crit)?,
        analysis.report(Statistic::Q, crit)?,
    ))
}

fn summarize(
    stats: &[f64],
    rejects: &[bool],
    khats: &[usize],
    n: usize,
    critical_value: f64,
    alpha_effective: f64,
) -> StatSummary {
    let ok = stats.len();
    let rejections = rejects.iter().filter(|r| **r).count();
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = match ok {
        0 => f64::NAN,
        _ if ok % 2 == 1 => sorted[ok / 2],
        _ => 0.5 * (sorted[ok / 2 - 1] + sorted[ok / 2]),
    };
    let rejected_k: Vec<usize> = khats
        .iter()
        .zip(rejects)
        .filter(|(_, r)| **r)
        .map(|(k, _)| *k)
        .collect();
    StatSummary {
        critical_value,
        alpha_effective,
        rejections,
        rejection_rate: if ok == 0 { f64::NAN } else { rejections as f64 / ok as f64 },
        mean: if ok == 0 { f64::NAN } else { stats.iter().sum::<f64>() / ok as f64 },
        median,
        khat_histogram: Histogram::of(&rejected_k, n, 20),
        mean_khat: (!rejected_k.is_empty())
            .then(|| rejected_k.iter().sum::<usize>() as f64 / rejected_k.len() as f64),
    }
}

/// Runs every scenario `replications` times. Replication `r` of scenario
/// `s` draws from streams keyed `(master_seed, s, r)`, so the report does
/// not depend on thread scheduling.
pub fn run_study(config: &StudyConfig, crit: &dyn CriticalValues) -> Result<StudyReport> {
    config.validate()?;
    let test = config.test_config();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = config.parallelism {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))?
    };

    let mut scenarios = Vec::with_capacity(config.scenarios.len());
    let mut outcomes = Vec::new();
    for (s, scenario) in config.scenarios.iter().enumerate() {
        let d = scenario.spec.dim();
        let c_crit = crit.critical_value(d, config.alpha, test.gamma)?;
        let q_crit = crit.critical_value(d, config.alpha / 2.0, 0.0)?;
        let name = if scenario.name.is_empty() {
            format!("scenario{s}")
        } else {
            scenario.name.clone()
        };
        let results: Vec<Result<(TestReport, TestReport)>> = pool.install(|| {
            (0..config.replications)
                .into_par_iter()
                .map(|r| run_replication(scenario, &test, crit, config.master_seed, s as u64, r as u64))
                .collect()
        });

        let mut c_stats = Vec::new();
        let mut c_rej = Vec::new();
        let mut c_k = Vec::new();
        let mut q_stats = Vec::new();
        let mut q_rej = Vec::new();
        let mut q_k = Vec::new();
        let mut failures = 0;
        for (r, res) in results.into_iter().enumerate() {
            let outcome = match res {
                Ok((c, q)) => {
                    c_stats.push(c.stat_value);
                    c_rej.push(c.reject);
                    c_k.push(c.k_hat);
                    q_stats.push(q.stat_value);
                    q_rej.push(q.reject);
                    q_k.push(q.k_hat);
                    ReplicationOutcome {
                        scenario: name.clone(),
                        replication: r,
                        error: None,
                        c_stat: Some(c.stat_value),
                        c_reject: Some(c.reject),
                        c_khat: Some(c.k_hat),
                        q_stat: Some(q.stat_value),
                        q_reject: Some(q.reject),
                        q_khat: Some(q.k_hat),
                    }
                }
                Err(e) => {
                    failures += 1;
                    ReplicationOutcome {
                        scenario: name.clone(),
                        replication: r,
                        error: Some(e.to_string()),
                        c_stat: None,
                        c_reject: None,
                        c_khat: None,
                        q_stat: None,
                        q_reject: None,
                        q_khat: None,
                    }
                }
            };
            outcomes.push(outcome);
        }
        scenarios.push(ScenarioReport {
            name,
            n: scenario.n,
            d,
            true_breakpoints: scenario.breakpoints(),
            replications: config.replications,
            failures,
            invalid: failures * 20 > config.replications,
            c: summarize(&c_stats, &c_rej, &c_k, scenario.n, c_crit, config.alpha),
            q: summarize(&q_stats, &q_rej, &q_k, scenario.n, q_crit, config.alpha / 2.0),
        });
    }
    Ok(StudyReport {
        master_seed: config.master_seed,
        replications: config.replications,
        alpha: config.alpha,
        scenarios,
        outcomes,
    })
}
