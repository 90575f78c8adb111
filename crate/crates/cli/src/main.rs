//! `countcp`: fit Poisson autoregressions and test for parameter changes.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numeric
//! failure, 4 quantile cache error.

mod data;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use countcp::changepoint::{analyze, segment_multiple, write_trajectory_csv, SigmaVariant};
use countcp::diagnostics::{
    acf, gof_bootstrap, residual_summary, write_acf_csv, write_residuals_csv, GofConfig, Kernel,
};
use countcp::likelihood::{intensities, pearson_residuals};
use countcp::nulldist::{default_cache_path, QuantileCache, Settings, DEFAULT_GRID_POINTS, DEFAULT_PATHS, DEFAULT_SEED};
use countcp::study::{run_study, simulate_series};
use countcp::{
    fit_mle, ChangeScenario, Error, FitOptions, ModelSpec, ParamVector, Statistic, StudyConfig, TestConfig,
};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn cache(err: Error) -> Self {
        Self {
            code: 4,
            message: format!("quantile cache: {err}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::NumericOverflow { .. }
            | Error::NotConverged { .. }
            | Error::FitFailed { .. }
            | Error::TooManySkipped { .. } => 3,
            Error::MissingQuantile { .. } => 4,
            _ => 2,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        // A closed downstream pipe is not a failure of ours.
        if err.kind() == std::io::ErrorKind::BrokenPipe {
            return Self {
                code: 0,
                message: String::new(),
            };
        }
        Self::input(err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        Self::input(err.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "countcp", version, about = "Change-point tests for Poisson autoregressions")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a (piecewise) stationary series to CSV.
    Simulate(SimulateArgs),
    /// Conditional maximum likelihood fit.
    Fit(FitArgs),
    /// Test for a single change in the parameter.
    Test(TestArgs),
    /// Locate several changes by binary segmentation.
    Segment(SegmentArgs),
    /// Critical values of the supremum of a weighted Brownian bridge.
    Quantiles(QuantilesArgs),
    /// Replication study from a JSON config.
    Study(StudyArgs),
    /// Kernel goodness-of-fit test and residual diagnostics.
    Gof(GofArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// `linear:p,q` or `power:p,q:delta=x`.
    #[arg(long)]
    model: String,
    /// alpha0, alpha_1..alpha_p, beta_1..beta_q.
    #[arg(long, allow_hyphen_values = true)]
    params: String,
    #[arg(long)]
    n: usize,
    /// Regime changes `tau:theta;tau:theta`; theta takes over after floor(n tau).
    #[arg(long)]
    breaks: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Extra jittered starts.
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    C,
    Q,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaArg {
    Hat,
    Tilde,
}

#[derive(Args)]
struct QuantileArgs {
    /// Cache file (default: $COUNTCP_CACHE_DIR/quantiles.json or the user cache dir).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Fail instead of simulating missing critical values.
    #[arg(long)]
    no_generate: bool,
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    quantile_seed: u64,
}

impl QuantileArgs {
    fn open(&self) -> CliResult<QuantileCache> {
        let settings = Settings {
            grid_points: self.grid_points,
            paths: self.paths,
            seed: self.quantile_seed,
        };
        let path = self.cache.clone().unwrap_or_else(default_cache_path);
        QuantileCache::open(path, settings, !self.no_generate).map_err(CliError::cache)
    }
}

#[derive(Args)]
struct TestOptions {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2.5)]
    delta0: f64,
    #[arg(long)]
    u_n: Option<usize>,
    #[arg(long)]
    v_n: Option<usize>,
    #[arg(long, value_enum, default_value = "hat")]
    sigma: SigmaArg,
    /// Fit every split from scratch instead of chaining warm starts.
    #[arg(long)]
    cold: bool,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TestOptions {
    fn config(&self, statistic: Statistic) -> TestConfig {
        TestConfig {
            statistic,
            alpha: self.alpha,
            gamma: self.gamma,
            delta0: self.delta0,
            u_n: self.u_n,
            v_n: self.v_n,
            sigma_variant: match self.sigma {
                SigmaArg::Hat => SigmaVariant::SplitHat,
                SigmaArg::Tilde => SigmaVariant::SplitTilde,
            },
            warm_start: !self.cold,
            stride: self.stride,
            fit: FitOptions {
                seed: self.seed,
                ..FitOptions::default()
            },
            ..TestConfig::default()
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long, value_enum, default_value = "c")]
    stat: StatArg,
    #[command(flatten)]
    test: TestOptions,
    #[command(flatten)]
    quantiles: QuantileArgs,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: String,
    /// Shortest segment that is still tested.
    #[arg(long, default_value_t = 100)]
    min_seg: usize,
    #[command(flatten)]
    test: TestOptions,
    #[command(flatten)]
    quantiles: QuantileArgs,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct QuantilesArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value = "0.05", value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[command(flatten)]
    quantiles: QuantileArgs,
    /// Print a JSON object instead of bare values.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    quantiles: QuantileArgs,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Per-replication outcomes.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Uniform,
    Epanechnikov,
}

#[derive(Args)]
struct GofArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: String,
    /// Use these parameters instead of fitting.
    #[arg(long)]
    params: Option<String>,
    #[arg(long, value_enum, default_value = "uniform")]
    kernel: KernelArg,
    /// `h1,h2`; default is std-dev times n^(-1/5) per coordinate.
    #[arg(long)]
    bandwidth: Option<String>,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_lag: usize,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    residuals_out: Option<PathBuf>,
    #[arg(long)]
    acf_out: Option<PathBuf>,
}

fn parse_model(s: &str) -> CliResult<ModelSpec> {
    Ok(s.parse()?)
}

fn parse_reals(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("{v:?} is not a number")))
        })
        .collect()
}

fn parse_params(spec: &ModelSpec, s: &str) -> CliResult<ParamVector> {
    Ok(ParamVector::from_slice(spec, &parse_reals(s)?)?)
}

fn parse_breaks(spec: &ModelSpec, s: &str) -> CliResult<Vec<(f64, ParamVector)>> {
    s.split(';')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let (tau, theta) = part
                .split_once(':')
                .ok_or_else(|| CliError::input(format!("break {part:?} is not tau:theta")))?;
            let tau: f64 = tau
                .trim()
                .parse()
                .map_err(|_| CliError::input(format!("{tau:?} is not a fraction")))?;
            Ok((tau, parse_params(spec, theta)?))
        })
        .collect()
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(std::io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult {
    let spec = parse_model(&args.model)?;
    let theta = parse_params(&spec, &args.params)?;
    let changes = match &args.breaks {
        Some(b) => parse_breaks(&spec, b)?,
        None => Vec::new(),
    };
    let mut scenario = ChangeScenario::with_changes(spec, theta, changes, args.n, args.seed);
    scenario.burn_in = args.burn_in;
    let series = simulate_series(&scenario)?;
    data::write_counts(&args.out, &series)?;
    let mut meta = args.out.clone().into_os_string();
    meta.push(".meta.json");
    write_json(Some(Path::new(&meta)), &serde_json::to_value(&scenario)?)
}

fn cmd_fit(args: &FitArgs) -> CliResult {
    let spec = parse_model(&args.model)?;
    let input = data::read_counts(&args.input)?;
    let opts = FitOptions {
        restarts: args.restarts,
        seed: args.seed,
        ..FitOptions::default()
    };
    let (fit, failure) = match fit_mle(&spec, &input.series, input.series.full(), &opts) {
        Ok(f) => (f, None),
        Err(Error::NotConverged { best }) => {
            let msg = format!("optimizer did not converge; best log-likelihood {:.6}", best.loglik);
            (*best, Some(CliError { code: 3, message: msg }))
        }
        Err(e) => return Err(e.into()),
    };
    let mut value = serde_json::to_value(&fit)?;
    value["model"] = serde_json::to_value(&spec)?;
    value["param_names"] = json!(spec.param_names());
    write_json(args.out_json.as_deref(), &value)?;
    failure.map_or(Ok(()), Err)
}

fn cmd_test(args: &TestArgs) -> CliResult {
    let spec = parse_model(&args.model)?;
    let input = data::read_counts(&args.input)?;
    let statistic = match args.stat {
        StatArg::C => Statistic::C,
        StatArg::Q => Statistic::Q,
    };
    let config = args.test.config(statistic);
    config.validate()?;
    let cache = args.quantiles.open()?;
    let analysis = analyze(&spec, &input.series, &config)?;
    let report = analysis.report(statistic, &cache)?;
    if let Some(path) = &args.trajectory_out {
        write_trajectory_csv(&report, &spec.param_names(), BufWriter::new(File::create(path)?))?;
    }
    let mut value = serde_json::to_value(&report)?;
    value["model"] = serde_json::to_value(&spec)?;
    if let Some(ts) = input.timestamp(report.k_hat) {
        value["k_hat_timestamp"] = json!(ts);
    }
    write_json(args.out_json.as_deref(), &value)
}

fn cmd_segment(args: &SegmentArgs) -> CliResult {
    let spec = parse_model(&args.model)?;
    let input = data::read_counts(&args.input)?;
    let config = args.test.config(Statistic::Q);
    let cache = args.quantiles.open()?;
    let seg = segment_multiple(&spec, &input.series, &config, args.min_seg, &cache)?;
    let mut value = serde_json::to_value(&seg)?;
    value["model"] = serde_json::to_value(&spec)?;
    if input.timestamps.is_some() {
        let ts: Vec<_> = seg.breakpoints.iter().map(|&b| input.timestamp(b)).collect();
        value["breakpoint_timestamps"] = json!(ts);
    }
    write_json(args.out_json.as_deref(), &value)
}

fn cmd_quantiles(args: &QuantilesArgs) -> CliResult {
    let cache = args.quantiles.open()?;
    let entry = cache.entry(args.d, args.gamma).map_err(|e| match e {
        Error::MissingQuantile { .. } | Error::Io(_) => CliError::cache(e),
        other => other.into(),
    })?;
    let values = args
        .alpha
        .iter()
        .map(|&a| entry.critical_value(a))
        .collect::<Result<Vec<_>, _>>()?;
    if args.json {
        let rows: Vec<Value> = args
            .alpha
            .iter()
            .zip(&values)
            .map(|(a, c)| json!({"alpha": a, "critical_value": c}))
            .collect();
        let value = json!({
            "d": args.d,
            "gamma": args.gamma,
            "grid_points": entry.grid_points,
            "paths": entry.paths,
            "seed": entry.seed,
            "quantiles": rows,
        });
        write_json(None, &value)
    } else {
        let mut out = std::io::stdout().lock();
        for c in values {
            writeln!(out, "{c:.4}")?;
        }
        Ok(())
    }
}

fn cmd_study(args: &StudyArgs, parallel: Option<usize>) -> CliResult {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::input(format!("{}: {e}", args.config.display())))?;
    let mut config: StudyConfig = serde_json::from_str(&text)?;
    if parallel.is_some() {
        config.parallelism = parallel;
    }
    let cache = args.quantiles.open()?;
    let report = run_study(&config, &cache)?;
    if let Some(path) = &args.out_csv {
        report.write_outcomes_csv(BufWriter::new(File::create(path)?))?;
    }
    write_json(args.out_json.as_deref(), &serde_json::to_value(&report)?)
}

fn cmd_gof(args: &GofArgs) -> CliResult {
    let spec = parse_model(&args.model)?;
    let input = data::read_counts(&args.input)?;
    let y = &input.series;
    let (theta, fit_json) = match &args.params {
        Some(p) => (parse_params(&spec, p)?, Value::Null),
        None => {
            let fit = fit_mle(&spec, y, y.full(), &FitOptions::default())?;
            (fit.theta_hat.clone(), serde_json::to_value(&fit)?)
        }
    };
    let bandwidth = match &args.bandwidth {
        Some(b) => match parse_reals(b)?.as_slice() {
            [h1, h2] => Some([*h1, *h2]),
            _ => return Err(CliError::input("bandwidth needs two values h1,h2")),
        },
        None => None,
    };
    let config = GofConfig {
        kernel: match args.kernel {
            KernelArg::Uniform => Kernel::Uniform,
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
        },
        bandwidth,
        bootstrap: args.bootstrap,
        seed: args.seed,
        ..GofConfig::default()
    };
    let report = gof_bootstrap(&spec, &theta, y, &config)?;
    let lambdas = intensities(&spec, &theta, y)?;
    let residuals = pearson_residuals(&spec, &theta, y)?;
    let summary = residual_summary(&residuals, args.max_lag)?;
    if let Some(path) = &args.residuals_out {
        write_residuals_csv(y, &lambdas, &residuals, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &args.acf_out {
        let counts = y.as_f64();
        let lag = args.max_lag.min((counts.len() - 1) / 2);
        let mut w = BufWriter::new(File::create(path)?);
        write_acf_csv(&acf(&counts, lag)?, &mut w)?;
        w.flush()?;
    }
    let value = json!({
        "model": serde_json::to_value(&spec)?,
        "gof": serde_json::to_value(&report)?,
        "residuals": serde_json::to_value(&summary)?,
        "fit": fit_json,
    });
    write_json(args.out_json.as_deref(), &value)
}

fn run(cli: Cli) -> CliResult {
    if let Some(threads) = cli.parallel {
        if threads == 0 {
            return Err(CliError::input("--parallel must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Quantiles(a) => cmd_quantiles(a),
        Command::Study(a) => cmd_study(a, cli.parallel),
        Command::Gof(a) => cmd_gof(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.code == 0 => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
