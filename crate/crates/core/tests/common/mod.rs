#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use countcp::nulldist::{QuantileCache, Settings};
use countcp::study::{simulate_keyed, ChangeScenario};
use countcp::{CountSeries, ModelSpec, ParamVector};

/// Critical values at default settings, persisted under the cargo target
/// directory so repeated test runs do not regenerate them.
pub fn critical_values() -> &'static QuantileCache {
    static CACHE: OnceLock<QuantileCache> = OnceLock::new();
    CACHE.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("quantiles.json");
        QuantileCache::open(path, Settings::default(), true).expect("open quantile cache")
    })
}

pub fn linear(p: usize, q: usize) -> ModelSpec {
    ModelSpec::linear(p, q).unwrap()
}

pub fn power(p: usize, q: usize, delta: f64) -> ModelSpec {
    ModelSpec::power(p, q, delta).unwrap()
}

pub fn theta(spec: &ModelSpec, values: &[f64]) -> ParamVector {
    ParamVector::from_slice(spec, values).unwrap()
}

pub fn simulate(spec: &ModelSpec, values: &[f64], n: usize, seed: u64) -> CountSeries {
    let sc = ChangeScenario::stationary(spec.clone(), theta(spec, values), n, seed);
    simulate_keyed(&sc, seed, 0, 0).unwrap()
}

pub fn simulate_change(
    spec: &ModelSpec,
    before: &[f64],
    changes: &[(f64, &[f64])],
    n: usize,
    seed: u64,
) -> CountSeries {
    let changes = changes.iter().map(|(tau, v)| (*tau, theta(spec, v))).collect();
    let sc = ChangeScenario::with_changes(spec.clone(), theta(spec, before), changes, n, seed);
    simulate_keyed(&sc, seed, 0, 0).unwrap()
}
