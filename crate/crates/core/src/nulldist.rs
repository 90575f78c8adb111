//! Critical values for the change-point statistics.
//!
//! Under the null the statistics converge to `sup_tau |W_d(tau)|^2 / q^2(tau)`
//! for a `d`-dimensional Brownian bridge `W_d` and weight
//! `q(tau) = (tau (1 - tau))^gamma`. Quantiles are estimated by simulating the
//! bridge on a regular grid; each path draws from its own keyed stream.

use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Role};

pub const DEFAULT_GRID_POINTS: usize = 10_000;
pub const DEFAULT_PATHS: usize = 200_000;
pub const DEFAULT_SEED: u64 = 0x5EED_B41D_6E00;

/// Environment variable overriding the quantile cache directory.
pub const CACHE_DIR_ENV: &str = "COUNTCP_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileRequest {
    pub d: usize,
    pub gamma: f64,
    pub grid_points: usize,
    pub paths: usize,
    pub seed: u64,
}

impl QuantileRequest {
    pub fn new(d: usize, gamma: f64) -> Self {
        Self {
            d,
            gamma,
            grid_points: DEFAULT_GRID_POINTS,
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
        }
    }

    pub fn with_settings(d: usize, gamma: f64, settings: Settings) -> Self {
        Self {
            d,
            gamma,
            grid_points: settings.grid_points,
            paths: settings.paths,
            seed: settings.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("dimension d must be at least 1".into()));
        }
        check_gamma(self.gamma)?;
        if self.grid_points < 2 || self.paths == 0 {
            return Err(Error::Config(format!(
                "need grid_points >= 2 and paths >= 1, got {} and {}",
                self.grid_points, self.paths
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..0.5).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 0.5), got {gamma}")));
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `q(tau) = (tau (1 - tau))^gamma`; identically 1 for `gamma = 0`.
pub fn weight(tau: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (tau * (1.0 - tau)).powf(gamma)
    }
}

/// One sup statistic per path, in path order.
pub fn simulate_sup_bridge(req: &QuantileRequest) -> Result<Vec<f64>> {
    req.validate()?;
    let m = req.grid_points;
    // Interior points tau_i = i/m, i = 1..m-1; the bridge vanishes at 0 and 1
    // and for gamma > 0 the weight does too, so endpoints are excluded.
    let inv_w2: Vec<f64> = (1..m)
        .map(|i| weight(i as f64 / m as f64, req.gamma).powi(-2))
        .collect();
    let out = (0..req.paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; m], vec![0.0; m]),
            |(walk, acc), path| {
                let mut rng = stream(req.seed, req.d as u64, path as u64, Role::Bridge);
                let mut incs = |buf: &mut [f64]| {
                    for v in buf.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                };
                sup_from_increments(req.d, m, &inv_w2, walk, acc, &mut incs)
            },
        )
        .collect();
    Ok(out)
}

/// Builds `d` bridges from standard normal increments supplied by `fill`
/// (called once per dimension with a buffer of length `m`) and returns the
/// weighted sup over the interior grid.
pub(crate) fn sup_from_increments(
    d: usize,
    m: usize,
    inv_w2: &[f64],
    walk: &mut [f64],
    acc: &mut [f64],
    fill: &mut dyn FnMut(&mut [f64]),
) -> f64 {
    let scale = 1.0 / (m as f64).sqrt();
    acc.fill(0.0);
    for _ in 0..d {
        fill(walk);
        let mut b = 0.0;
        for v in walk.iter_mut() {
            b += *v * scale;
            *v = b;
        }
        let end = walk[m - 1];
        for i in 1..m {
            let w = walk[i - 1] - (i as f64 / m as f64) * end;
            acc[i] += w * w;
        }
    }
    (1..m).fold(0.0f64, |best, i| best.max(acc[i] * inv_w2[i - 1]))
}

/// Type-7 (linear interpolation) empirical quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Simulation settings shared by every entry generated by a cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings {
    pub grid_points: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            grid_points: DEFAULT_GRID_POINTS,
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileEntry {
    pub d: usize,
    pub gamma: f64,
    pub grid_points: usize,
    pub paths: usize,
    pub seed: u64,
    /// Sorted sup statistics.
    pub sample: Vec<f64>,
}

impl QuantileEntry {
    pub fn generate(req: &QuantileRequest) -> Result<Self> {
        let mut sample = simulate_sup_bridge(req)?;
        sample.sort_by(f64::total_cmp);
        Ok(Self {
            d: req.d,
            gamma: req.gamma,
            grid_points: req.grid_points,
            paths: req.paths,
            seed: req.seed,
            sample,
        })
    }

    /// The `(1 - alpha)`-quantile `c_alpha`.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(quantile_sorted(&self.sample, 1.0 - alpha))
    }

    fn matches(&self, req: &QuantileRequest) -> bool {
        self.d == req.d
            && self.gamma == req.gamma
            && self.grid_points == req.grid_points
            && self.paths == req.paths
            && self.seed == req.seed
    }
}

/// Source of `c_alpha` for a given dimension and weight exponent.
pub trait CriticalValues: Sync {
    fn critical_value(&self, d: usize, alpha: f64, gamma: f64) -> Result<f64>;
}

/// A fixed critical value, whatever the dimension.
#[derive(Clone, Copy, Debug)]
pub struct FixedCritical(pub f64);

impl CriticalValues for FixedCritical {
    fn critical_value(&self, _d: usize, alpha: f64, _gamma: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.0)
    }
}

/// Persisted collection of simulated sup samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub entries: Vec<QuantileEntry>,
}

impl QuantileTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn get(&self, req: &QuantileRequest) -> Option<&QuantileEntry> {
        self.entries.iter().find(|e| e.matches(req))
    }

    /// Any entry for `(d, gamma)`, preferring the most paths, then the
    /// finest grid.
    pub fn best_for(&self, d: usize, gamma: f64) -> Option<&QuantileEntry> {
        self.entries
            .iter()
            .filter(|e| e.d == d && e.gamma == gamma)
            .max_by_key(|e| (e.paths, e.grid_points))
    }

    pub fn insert(&mut self, entry: QuantileEntry) {
        self.entries.retain(|e| {
            !(e.d == entry.d
                && e.gamma == entry.gamma
                && e.grid_points == entry.grid_points
                && e.paths == entry.paths
                && e.seed == entry.seed)
        });
        self.entries.push(entry);
    }
}

impl CriticalValues for QuantileTable {
    fn critical_value(&self, d: usize, alpha: f64, gamma: f64) -> Result<f64> {
        self.best_for(d, gamma)
            .ok_or(Error::MissingQuantile { d, alpha, gamma })?
            .critical_value(alpha)
    }
}

/// Quantile table with optional on-demand generation and a JSON backing
/// file keyed by `(d, gamma, grid, paths, seed)`.
#[derive(Debug)]
pub struct QuantileCache {
    table: RwLock<QuantileTable>,
    settings: Settings,
    file: Option<PathBuf>,
    generate: bool,
}

impl QuantileCache {
    pub fn in_memory(settings: Settings) -> Self {
        Self {
            table: RwLock::new(QuantileTable::default()),
            settings,
            file: None,
            generate: true,
        }
    }

    /// Opens (or starts) the cache file at `path`. A missing file is not an
    /// error; an unreadable one is.
    pub fn open(path: impl Into<PathBuf>, settings: Settings, generate: bool) -> Result<Self> {
        let file = path.into();
        let table = if file.exists() {
            QuantileTable::load(&file)?
        } else {
            QuantileTable::default()
        };
        Ok(Self {
            table: RwLock::new(table),
            settings,
            file: Some(file),
            generate,
        })
    }

    pub fn settings(&self) -> Settings {
        self.settings
    }

    /// Entry for `(d, gamma)` under this cache's settings, generating and
    /// persisting it on a miss when allowed.
    pub fn ensure(&self, d: usize, gamma: f64) -> Result<()> {
        let req = QuantileRequest::with_settings(d, gamma, self.settings);
        if self.table.read().expect("cache lock").get(&req).is_some() {
            return Ok(());
        }
        if !self.generate {
            return Err(Error::MissingQuantile {
                d,
                alpha: f64::NAN,
                gamma,
            });
        }
        let entry = QuantileEntry::generate(&req)?;
        let mut table = self.table.write().expect("cache lock");
        if table.get(&req).is_none() {
            table.insert(entry);
            if let Some(file) = &self.file {
                table.save(file)?;
            }
        }
        Ok(())
    }

    pub fn entry(&self, d: usize, gamma: f64) -> Result<QuantileEntry> {
        self.ensure(d, gamma)?;
        let req = QuantileRequest::with_settings(d, gamma, self.settings);
        Ok(self
            .table
            .read()
            .expect("cache lock")
            .get(&req)
            .expect("ensured")
            .clone())
    }
}

impl CriticalValues for QuantileCache {
    fn critical_value(&self, d: usize, alpha: f64, gamma: f64) -> Result<f64> {
        check_alpha(alpha)?;
        self.ensure(d, gamma).map_err(|e| match e {
            Error::MissingQuantile { d, gamma, .. } => Error::MissingQuantile { d, alpha, gamma },
            other => other,
        })?;
        let req = QuantileRequest::with_settings(d, gamma, self.settings);
        self.table
            .read()
            .expect("cache lock")
            .get(&req)
            .expect("ensured")
            .critical_value(alpha)
    }
}

/// `$COUNTCP_CACHE_DIR/quantiles.json`, else the per-user cache directory.
pub fn default_cache_path() -> PathBuf {
    let dir = std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("XDG_CACHE_HOME").map(|d| PathBuf::from(d).join("countcp")))
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("countcp")))
        .unwrap_or_else(|| std::env::temp_dir().join("countcp"));
    dir.join("quantiles.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(d: usize, gamma: f64) -> QuantileRequest {
        QuantileRequest {
            d,
            gamma,
            grid_points: 500,
            paths: 4000,
            seed: 11,
        }
    }

    #[test]
    fn sample_is_nonnegative_and_top_quantile_degenerates() {
        let e = QuantileEntry::generate(&small(2, 0.0)).unwrap();
        assert!(e.sample.iter().all(|&v| v >= 0.0));
        let low = e.critical_value(1.0 - 1e-9).unwrap();
        assert!(low <= e.sample[0] + 1e-6);
        assert!(low >= 0.0);
    }

    #[test]
    fn quantiles_are_ordered_in_alpha() {
        for gamma in [0.0, 0.25] {
            let e = QuantileEntry::generate(&small(1, gamma)).unwrap();
            let c01 = e.critical_value(0.01).unwrap();
            let c05 = e.critical_value(0.05).unwrap();
            let c10 = e.critical_value(0.10).unwrap();
            assert!(c01 > c05 && c05 > c10, "{c01} {c05} {c10}");
        }
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let a = simulate_sup_bridge(&small(3, 0.0)).unwrap();
        let b = simulate_sup_bridge(&small(3, 0.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantiles_increase_with_dimension() {
        let c: Vec<f64> = (1..=3)
            .map(|d| QuantileEntry::generate(&small(d, 0.0)).unwrap().critical_value(0.05).unwrap())
            .collect();
        assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
    }

    #[test]
    fn finer_grid_dominates_pathwise() {
        // The coarse grid uses aggregated fine increments, so its sup is over
        // a subset of the same bridge values.
        let fine = 1000;
        let coarse = 100;
        let w_fine = vec![1.0; fine - 1];
        let w_coarse = vec![1.0; coarse - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut incs = vec![0.0; fine];
            for v in incs.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let agg: Vec<f64> = incs
                .chunks(fine / coarse)
                .map(|c| c.iter().sum::<f64>() / ((fine / coarse) as f64).sqrt())
                .collect();
            let (mut w1, mut a1) = (vec![0.0; fine], vec![0.0; fine]);
            let (mut w2, mut a2) = (vec![0.0; coarse], vec![0.0; coarse]);
            let s_fine = sup_from_increments(1, fine, &w_fine, &mut w1, &mut a1, &mut |b| {
                b.copy_from_slice(&incs)
            });
            let s_coarse = sup_from_increments(1, coarse, &w_coarse, &mut w2, &mut a2, &mut |b| {
                b.copy_from_slice(&agg)
            });
            assert!(s_coarse <= s_fine + 1e-12);
        }
    }

    #[test]
    fn table_round_trips_through_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.json");
        let settings = Settings {
            grid_points: 200,
            paths: 500,
            seed: 3,
        };
        let cache = QuantileCache::open(&path, settings, true).unwrap();
        let c = cache.critical_value(2, 0.05, 0.0).unwrap();
        assert!(path.exists());
        let reopened = QuantileCache::open(&path, settings, false).unwrap();
        assert_eq!(reopened.critical_value(2, 0.05, 0.0).unwrap(), c);
        assert!(matches!(
            reopened.critical_value(3, 0.05, 0.0),
            Err(Error::MissingQuantile { d: 3, .. })
        ));
        let table = QuantileTable::load(&path).unwrap();
        assert_eq!(table.critical_value(2, 0.05, 0.0).unwrap(), c);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(simulate_sup_bridge(&small(0, 0.0)).is_err());
        assert!(simulate_sup_bridge(&small(1, 0.5)).is_err());
        assert!(FixedCritical(1.0).critical_value(1, 1.0, 0.0).is_err());
    }
}
