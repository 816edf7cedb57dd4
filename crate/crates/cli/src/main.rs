//! `fairalloc` command-line tool.
//!
//! Failures print one line `error: <Kind>: <message>` on stderr and exit with
//! status 1. Fairness diagnostics are report content and never change the
//! exit status.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairalloc::backtest::{
    fairness_report_with, run_backtest, secured_positions, ReportOptions, SearchMode, DEFAULT_GRID_STEP,
};
use fairalloc::bn::{BnCache, BnSolverConfig, DEFAULT_MC_SAMPLES, DEFAULT_SEED, DEFAULT_TOL};
use fairalloc::estimators::Estimator;
use fairalloc::format::fmt12;
use fairalloc::ingest::{
    build_portfolio, load_returns_csv, synthetic_dates, write_sample_csv, PortfolioWeights, ReturnPanel,
};
use fairalloc::simulate::{mvn_sample, mvt_sample, ModelParams};
use fairalloc::{AllocationVector, Error, EstimatorId, PnlSample, Result, RiskLevel};

#[derive(Parser)]
#[command(name = "fairalloc", version, about = "Fair expected-shortfall capital allocation and backtesting")]
struct Cli {
    /// Maximum worker threads (results do not depend on it)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate allocations on a P&L panel
    Allocate(AllocateArgs),
    /// Backtest an allocation methodology and report fairness statistics
    Backtest(BacktestArgs),
    /// Write a seeded simulated P&L panel
    Simulate(SimulateArgs),
    /// Solve or look up the fair Gaussian scaling constant b_n
    Bn(BnArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// P&L or return panel CSV with header `date,<ticker_1>,...`
    #[arg(long, value_name = "CSV")]
    input: PathBuf,

    /// Comma-separated notionals applied to the input columns
    #[arg(long, value_name = "W1,W2,...", allow_hyphen_values = true)]
    weights: Option<String>,
}

#[derive(Args)]
struct EstimatorArgs {
    /// mean, gaussian-fair, gaussian-plugin, np-hat, np-check, gaussian-true or external
    #[arg(long, value_name = "ID")]
    estimator: EstimatorId,

    /// ES level in (0, 1)
    #[arg(long, value_name = "A")]
    alpha: f64,

    /// Model JSON for gaussian-true: {"mu": [...], "sigma": [[...], ...]}
    #[arg(long, value_name = "JSON")]
    params: Option<PathBuf>,

    /// Monte Carlo sample size when b_n has to be solved
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MC_SAMPLES as f64)]
    bn_samples: f64,

    /// Root tolerance when b_n has to be solved
    #[arg(long, value_name = "TOL", default_value_t = DEFAULT_TOL)]
    bn_tol: f64,

    /// Seed of the b_n solver
    /// Seed of the Monte Carlo sample
    #[arg(long, value_name = "S", default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    panel: PanelArgs,

    #[command(flatten)]
    estimator: EstimatorArgs,

    /// Rolling window length; without it one allocation uses the whole panel
    #[arg(long, value_name = "N")]
    window: Option<usize>,

    /// Allocation CSV `date,a_1,...,a_d,total`
    #[arg(long, value_name = "CSV")]
    output: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    panel: PanelArgs,

    #[command(flatten)]
    estimator: EstimatorArgs,

    /// Rolling window length (not used by external)
    #[arg(long, value_name = "N")]
    window: Option<usize>,

    /// Step of the risk-level grid
    #[arg(long, value_name = "STEP", default_value_t = DEFAULT_GRID_STEP)]
    grid: f64,

    /// Search Upsilon and W on the exact step boundaries k/m instead of the grid
    #[arg(long)]
    exact: bool,

    /// Allocation CSV for the external estimator, matched to the input by date
    #[arg(long, value_name = "CSV")]
    allocations: Option<PathBuf>,

    /// Fairness report JSON
    #[arg(long, value_name = "JSON")]
    report: PathBuf,

    /// Curve CSV `beta,g_total,g_1,...,g_d`
    #[arg(long, value_name = "CSV")]
    curves: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Gaussian,
    StudentT,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: ModelKind,

    /// Model JSON {"mu": [...], "sigma": [[...], ...], "nu": 5}
    #[arg(long, value_name = "JSON")]
    params: PathBuf,

    /// Number of rows
    #[arg(long, value_name = "N")]
    days: usize,

    /// Seed of the scenario generator
    #[arg(long, value_name = "S")]
    seed: u64,

    /// Panel CSV `date,x_1,...,x_d`, dated daily from 2000-01-01
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Args)]
struct BnArgs {
    /// Sample size n >= 2
    #[arg(long)]
    n: usize,

    /// ES level in (0, 1)
    #[arg(long, value_name = "A")]
    alpha: f64,

    /// Monte Carlo sample size
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MC_SAMPLES as f64)]
    samples: f64,

    /// Root tolerance on the Monte Carlo ES
    #[arg(long, value_name = "TOL", default_value_t = DEFAULT_TOL)]
    tol: f64,

    /// Seed of the Monte Carlo sample
    #[arg(long, value_name = "S", default_value_t = DEFAULT_SEED)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    match cli.command {
        Command::Allocate(a) => cmd_allocate(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bn(a) => cmd_bn(a),
    }
}

fn level(alpha: f64) -> Result<RiskLevel> {
    RiskLevel::open(alpha)
}

fn sample_count(x: f64, flag: &str) -> Result<usize> {
    if !(x >= 1.0) || x.fract() != 0.0 || x > 1e12 {
        return Err(Error::InvalidInput(format!("{flag} must be a positive integer, got {x}")));
    }
    Ok(x as usize)
}

fn window_size(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidN(n));
    }
    Ok(n)
}

/// Panel with weights applied, and its column names.
fn load_panel(args: &PanelArgs) -> Result<(PnlSample, Vec<String>)> {
    let panel = load_returns_csv(&args.input)?;
    let sample = match &args.weights {
        Some(w) => build_portfolio(&panel, &PortfolioWeights::parse_list(w)?)?,
        None => panel.to_sample()?,
    };
    Ok((sample, panel.tickers().to_vec()))
}

fn build_estimator(args: &EstimatorArgs, n: usize, alpha: RiskLevel) -> Result<Estimator> {
    Ok(match args.estimator {
        EstimatorId::Mean => Estimator::Mean,
        EstimatorId::GaussianPlugin => Estimator::GaussianPlugin,
        EstimatorId::NpHat => Estimator::NpHat,
        EstimatorId::NpCheck => Estimator::NpCheck,
        EstimatorId::GaussianFair => {
            let config = BnSolverConfig {
                mc_samples: sample_count(args.bn_samples, "--bn-samples")?,
                tol: args.bn_tol,
                seed: args.seed,
            };
            let cache = BnCache::from_env();
            let (entry, solved) = cache.resolve(n, alpha, &config)?;
            if solved {
                eprintln!("solved b_{n} = {} and cached it in {}", fmt12(entry.value), cache.path().display());
            }
            Estimator::GaussianFair { bn: entry.value }
        }
        EstimatorId::GaussianTrue => {
            let path = args
                .params
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("gaussian-true needs --params".into()))?;
            Estimator::GaussianTrue(ModelParams::from_json(&fs::read_to_string(path)?)?.gaussian()?)
        }
        EstimatorId::External => {
            return Err(Error::InvalidInput(
                "external allocations are read by `backtest --allocations`".into(),
            ))
        }
    })
}

fn cmd_allocate(args: AllocateArgs) -> Result<()> {
    let alpha = level(args.estimator.alpha)?;
    let (data, _) = load_panel(&args.panel)?;
    let dates = data.dates().expect("CSV panels are dated").to_vec();
    let (allocs, alloc_dates) = match args.window {
        Some(n) => {
            let n = window_size(n)?;
            let est = build_estimator(&args.estimator, n, alpha)?;
            let allocs = fairalloc::backtest::rolling_allocations(&data, &est, alpha, n)?;
            (allocs, dates[n..].to_vec())
        }
        None => {
            let n = window_size(data.n())?;
            let est = build_estimator(&args.estimator, n, alpha)?;
            (vec![est.allocate(data.view(), alpha)?], vec![dates[n - 1]])
        }
    };
    let mut out = String::from("date");
    for i in 1..=data.d() {
        write!(out, ",a_{i}").unwrap();
    }
    out.push_str(",total\n");
    for (date, a) in alloc_dates.iter().zip(&allocs) {
        write!(out, "{date}").unwrap();
        for v in &a.a {
            write!(out, ",{}", fmt12(*v)).unwrap();
        }
        writeln!(out, ",{}", fmt12(a.total())).unwrap();
    }
    write_file(&args.output, out.as_bytes())
}

/// Reads `date,a_1,...,a_d,total` and pairs each row with the P&L of the same date.
fn external_series(
    data: &PnlSample,
    path: &Path,
    alpha: RiskLevel,
) -> Result<fairalloc::backtest::BacktestSeries> {
    let table: ReturnPanel = load_returns_csv(path)?;
    let d = data.d();
    if table.d() != d + 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("{} allocation columns plus total", d),
            actual: format!("{} columns", table.d()),
        });
    }
    let dates = data.dates().expect("CSV panels are dated");
    let mut rows = Vec::with_capacity(table.n() * d);
    let mut allocs = Vec::with_capacity(table.n());
    for (j, date) in table.dates().iter().enumerate() {
        let k = dates
            .binary_search(date)
            .map_err(|_| Error::InvalidInput(format!("no P&L row dated {date}")))?;
        rows.extend_from_slice(data.row(k));
        allocs.push(AllocationVector::new(table.row(j)[..d].to_vec(), EstimatorId::External, alpha, 0)?);
    }
    let x = PnlSample::from_row_major(rows, table.n(), d)?;
    let mut series = secured_positions(x.view(), &allocs)?;
    series.dates = Some(table.dates().to_vec());
    Ok(series)
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let alpha = level(args.estimator.alpha)?;
    let (data, _) = load_panel(&args.panel)?;
    let series = if args.estimator.estimator == EstimatorId::External {
        let path = args
            .allocations
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("external needs --allocations".into()))?;
        external_series(&data, path, alpha)?
    } else {
        let n = window_size(
            args.window
                .ok_or_else(|| Error::InvalidInput("--window is required".into()))?,
        )?;
        let est = build_estimator(&args.estimator, n, alpha)?;
        run_backtest(&data, &est, alpha, n)?.1
    };
    let options = ReportOptions {
        grid_step: args.grid,
        mode: if args.exact { SearchMode::Exact } else { SearchMode::Grid },
    };
    let report = fairness_report_with(&series, alpha, options)?;
    let mut json = report.to_json()?;
    json.push('\n');
    write_file(&args.report, json.as_bytes())?;
    let mut curves = Vec::new();
    report.write_curves_csv(&mut curves)?;
    write_file(&args.curves, &curves)?;
    println!(
        "m={} G={} upsilon={} flags={}",
        report.m,
        fmt12(report.g_total_at_alpha),
        fmt12(report.upsilon),
        report.flags.len()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let params = ModelParams::from_json(&fs::read_to_string(&args.params)?)?;
    if args.days == 0 {
        return Err(Error::InvalidInput("--days must be at least 1".into()));
    }
    let sample = match args.model {
        ModelKind::Gaussian => mvn_sample(&params.gaussian()?, args.days, args.seed)?,
        ModelKind::StudentT => mvt_sample(&params.student_t()?, args.days, args.seed)?,
    };
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let sample = sample.with_dates(synthetic_dates(start, args.days))?;
    let names: Vec<String> = (1..=sample.d()).map(|i| format!("x_{i}")).collect();
    let mut buf = Vec::new();
    write_sample_csv(&sample, &names, &mut buf)?;
    write_file(&args.out, &buf)
}

fn cmd_bn(args: BnArgs) -> Result<()> {
    let alpha = level(args.alpha)?;
    let n = window_size(args.n)?;
    let config = BnSolverConfig {
        mc_samples: sample_count(args.samples, "--samples")?,
        tol: args.tol,
        seed: args.seed,
    };
    let cache = BnCache::from_env();
    let (entry, solved) = cache.resolve(n, alpha, &config)?;
    if !solved {
        eprintln!("cache hit in {}", cache.path().display());
    }
    println!("{}", entry.to_record());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::from)
}
