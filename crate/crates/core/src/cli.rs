//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for bad flags, configuration or input data,
//! 3 when a numerical routine fails. Failures also print
//! `error_code=<name>` on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::backtest::{fit, make_schedule, run_backtest, FitParams, Method};
use crate::dcc;
use crate::error::{Error, Result};
use crate::io::{self, MethodChoice, RunConfig, RunEcho, Steepness, SteepnessChoice};
use crate::model::{ReturnsPanel, Variant, DEFAULT_EPS};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "index-tracker", version, about = "Sparse index tracking with a smooth cardinality constraint")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one portfolio on the whole data span.
    Solve(SolveArgs),
    /// Sliding-window backtest with periodic rebalancing.
    Backtest(BacktestArgs),
    /// Report which steepness conditions hold, or scan a range of a.
    CheckConditions(CheckArgs),
    /// Write a synthetic price file with a sparse planted index.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Price CSV with header date,TICKER1,...
    #[arg(long)]
    data: PathBuf,
    /// Separate CSV holding the index column, on the same dates.
    #[arg(long)]
    index_data: Option<PathBuf>,
    /// Column holding the index prices.
    #[arg(long, default_value = "INDEX")]
    target: String,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "dcc")]
    method: Method,
    /// Maximum number of holdings.
    #[arg(long, default_value_t = 15)]
    k: usize,
    /// Sigmoid steepness, or `auto` for the smallest a meeting every condition.
    #[arg(long, default_value = "auto")]
    a: Steepness,
    /// Weight cutoff below which a stock is not held.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, value_enum, default_value = "sigmoid")]
    variant: VariantArg,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol_objective: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_feasibility: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum VariantArg {
    Sigmoid,
    Rational,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sigmoid => Variant::Sigmoid,
            VariantArg::Rational => Variant::Rational,
        }
    }
}

/// Flags override the values read from `--config`.
#[derive(Debug, Args)]
struct BacktestArgs {
    /// TOML run configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    index_data: Option<PathBuf>,
    /// Column holding the index prices [default: INDEX]
    #[arg(long)]
    target: Option<String>,
    /// [default: dcc]
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    /// [default: 15]
    #[arg(long)]
    k: Option<usize>,
    /// [default: auto]
    #[arg(long)]
    a: Option<Steepness>,
    /// [default: 0.0001]
    #[arg(long)]
    eps: Option<f64>,
    /// [default: sigmoid]
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Days in each fitting window [default: 252]
    #[arg(long)]
    lookback: Option<usize>,
    /// Days between rebalances [default: 63]
    #[arg(long)]
    rebalance: Option<usize>,
    /// [default: 500]
    #[arg(long)]
    max_iterations: Option<usize>,
    /// [default: 1e-9]
    #[arg(long)]
    tol_objective: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    tol_feasibility: Option<f64>,
    /// Threads fitting windows in parallel [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Echoed into the summary [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: out]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long)]
    a: Option<f64>,
    /// Geometric grid `lo:hi:steps` written to conditions.csv.
    #[arg(long)]
    scan: Option<Scan>,
    /// Directory for conditions.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy)]
struct Scan {
    lo: f64,
    hi: f64,
    steps: usize,
}

impl FromStr for Scan {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || format!("expected lo:hi:steps, got {s:?}");
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Scan {
            lo: parts[0].parse().map_err(|_| bad())?,
            hi: parts[1].parse().map_err(|_| bad())?,
            steps: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

impl Scan {
    fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite() && self.steps >= 2) {
            return Err(Error::InvalidParameter(format!(
                "scan needs 0 < lo < hi and steps >= 2, got {}:{}:{}",
                self.lo, self.hi, self.steps
            )));
        }
        let ratio = (self.hi / self.lo).ln() / (self.steps - 1) as f64;
        Ok((0..self.steps)
            .map(|i| if i + 1 == self.steps { self.hi } else { self.lo * (ratio * i as f64).exp() })
            .collect())
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    n: usize,
    /// Number of daily returns; the file has one more price row.
    #[arg(long, default_value_t = 504)]
    d: usize,
    #[arg(long, default_value_t = 15)]
    sparse_k: usize,
    /// Standard deviation of the noise added to the index return.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Price CSV to write; planted weights go to `<stem>_truth.csv` beside it.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                eprintln!("error_code=UsageError");
            }
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::CheckConditions(a) => cmd_check_conditions(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("error_code={}", e.code());
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

fn load_panel(data: &Path, index: Option<&Path>, target: &str) -> Result<ReturnsPanel> {
    let cfg = RunConfig {
        data_path: Some(data.to_path_buf()),
        index_path: index.map(Path::to_path_buf),
        target: target.to_string(),
        ..RunConfig::default()
    };
    cfg.load_panel()
}

fn choose_steepness(a: Steepness, n: usize, eps: f64) -> Result<SteepnessChoice> {
    let (value, searched) = match a {
        Steepness::Auto => (dcc::min_a_search(n, eps)?, true),
        Steepness::Value(v) => (v, false),
    };
    let mut conditions = dcc::check_conditions(n, value, eps)?;
    if searched {
        conditions.min_a_overall = Some(value);
    }
    Ok(SteepnessChoice {
        a: value,
        searched,
        conditions,
    })
}

fn check_k(method: Method, k: usize, n: usize) -> Result<()> {
    if method != Method::Full && (k < 1 || k >= n) {
        return Err(Error::InfeasibleConstraintConfig(format!("K must satisfy 1 <= K < N={n}, got {k}")));
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<String> {
    if args.k < 1 {
        return Err(Error::InfeasibleConstraintConfig(format!("K must be >= 1, got {}", args.k)));
    }
    let panel = load_panel(&args.data.data, args.data.index_data.as_deref(), &args.data.target)?;
    check_k(args.method, args.k, panel.n_stocks())?;
    let steepness = choose_steepness(args.a, panel.n_stocks(), args.eps)?;
    let params = FitParams {
        k: args.k,
        a: steepness.a,
        eps: args.eps,
        variant: args.variant.into(),
        solver: crate::solver::SolverOptions {
            max_iterations: args.max_iterations,
            tol_objective: args.tol_objective,
            tol_feasibility: args.tol_feasibility,
            initial_weights: None,
        },
    };
    params.solver.validate()?;
    let report = fit(&panel, args.method, &params)?;
    let echo = RunEcho {
        method: args.method,
        k: args.k,
        eps: args.eps,
        variant: params.variant,
        steepness,
        n_stocks: panel.n_stocks(),
        n_days: panel.n_days(),
        lookback_days: None,
        rebalance_days: None,
        seed: 0,
    };
    io::write_solve_report(&report, &panel, &echo, &args.out)?;
    Ok(format!(
        "method={} objective={} exact_cardinality={} wall_time_seconds={:.6}\n",
        args.method.name(),
        report.objective,
        report.exact_cardinality,
        report.wall_time_seconds
    ))
}

fn backtest_config(args: BacktestArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { cfg.$field = v.into(); })*
        };
    }
    if let Some(p) = args.data {
        cfg.data_path = Some(p);
    }
    if let Some(p) = args.index_data {
        cfg.index_path = Some(p);
    }
    apply!(target => target, method => method, k => k, a => a, eps => eps, variant => variant,
        lookback => lookback_days, rebalance => rebalance_days, max_iterations => max_iterations,
        tol_objective => tol_objective, tol_feasibility => tol_feasibility, jobs => jobs,
        seed => seed, out => output_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_backtest(args: BacktestArgs) -> Result<String> {
    let cfg = backtest_config(args)?;
    let panel = cfg.load_panel()?;
    let methods = cfg.method.methods();
    for &m in &methods {
        check_k(m, cfg.k, panel.n_stocks())?;
    }
    let schedule = make_schedule(&panel.dates, cfg.lookback_days, cfg.rebalance_days)?;
    let steepness = choose_steepness(cfg.a, panel.n_stocks(), cfg.eps)?;
    let params = FitParams {
        k: cfg.k,
        a: steepness.a,
        eps: cfg.eps,
        variant: cfg.variant,
        solver: cfg.solver_options(),
    };

    let mut text = String::new();
    let mut table = String::from("method,mae,cumulative_return,volatility,sharpe,mdd,rebalances\n");
    for &method in &methods {
        let result = run_backtest(&panel, method, &params, &schedule, cfg.jobs)?;
        let dir = if methods.len() > 1 {
            cfg.output_dir.join(method.name())
        } else {
            cfg.output_dir.clone()
        };
        let echo = RunEcho {
            method,
            k: cfg.k,
            eps: cfg.eps,
            variant: cfg.variant,
            steepness,
            n_stocks: panel.n_stocks(),
            n_days: panel.n_days(),
            lookback_days: Some(cfg.lookback_days),
            rebalance_days: Some(cfg.rebalance_days),
            seed: cfg.seed,
        };
        io::write_backtest_report(&result, &panel.tickers, &echo, &dir)?;
        let m = &result.metrics;
        let sharpe = m.sharpe.map_or_else(|| "NA".to_string(), |s| s.to_string());
        let _ = writeln!(
            text,
            "method={} mae={} cumulative_return={} volatility={} sharpe={sharpe} mdd={} rebalances={}",
            method.name(),
            result.mae,
            m.cumulative_return,
            m.volatility,
            m.mdd,
            result.fits.len()
        );
        let _ = writeln!(
            table,
            "{},{},{},{},{sharpe},{},{}",
            method.name(),
            result.mae,
            m.cumulative_return,
            m.volatility,
            m.mdd,
            result.fits.len()
        );
    }
    if methods.len() > 1 {
        let path = cfg.output_dir.join("methods.csv");
        fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    }
    Ok(text)
}

fn cmd_check_conditions(args: CheckArgs) -> Result<String> {
    if args.n < 2 {
        return Err(Error::InvalidParameter(format!("N must be >= 2, got {}", args.n)));
    }
    if !(args.eps > 0.0 && args.eps < 0.5) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 0.5), got {}", args.eps)));
    }
    let mut text = String::new();
    if let Some(a) = args.a {
        let r = dcc::check_conditions(args.n, a, args.eps)?;
        let _ = writeln!(
            text,
            "a={a} c0={} c1={} c2={} all={} e={} n_times_e={}",
            r.c0,
            r.c1,
            r.c2,
            r.all(),
            r.error_integral,
            r.n_times_e
        );
    }
    if let Some(scan) = args.scan {
        let mut csv = String::from("a,c0,c1,c2,e\n");
        for a in scan.points()? {
            let r = dcc::check_conditions(args.n, a, args.eps)?;
            let _ = writeln!(csv, "{a},{},{},{},{}", r.c0, r.c1, r.c2, r.error_integral);
        }
        fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        let path = args.out.join("conditions.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    if args.a.is_none() {
        let t = dcc::condition_thresholds(args.n, args.eps)?;
        let _ = writeln!(
            text,
            "c0_min_a={} c1_min_a={} c2_min_a={} c2_first_integer_a={} min_a={}",
            t.c0,
            t.c1,
            t.c2,
            first_integer_c2(args.n, args.eps, t.c2)?,
            t.overall()
        );
    }
    Ok(text)
}

/// Smallest integer `a` at which C2 holds, checked directly on both sides.
fn first_integer_c2(n: usize, eps: f64, threshold: f64) -> Result<u64> {
    let holds = |a: u64| -> Result<bool> { Ok(dcc::check_conditions(n, a as f64, eps)?.c2) };
    let mut a = threshold.ceil().max(1.0) as u64;
    while a > 1 && holds(a - 1)? {
        a -= 1;
    }
    while !holds(a)? {
        a += 1;
    }
    Ok(a)
}

fn cmd_synth(args: SynthArgs) -> Result<String> {
    let data = synth::generate(&SynthConfig {
        n: args.n,
        d: args.d,
        sparse_k: args.sparse_k,
        noise: args.noise,
        seed: args.seed,
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    io::write_prices_csv(
        &args.out,
        &data.price_dates,
        &data.panel.tickers,
        &data.prices,
        "INDEX",
        &data.index_prices,
    )?;
    let truth_path = truth_path(&args.out);
    io::write_truth(&truth_path, &data.panel.tickers, &data.truth)?;
    Ok(format!("wrote {} and {}\n", args.out.display(), truth_path.display()))
}

/// `<dir>/<stem>_truth.csv` for a price file `<dir>/<stem>.csv`.
pub fn truth_path(prices: &Path) -> PathBuf {
    let stem = prices.file_stem().map_or_else(|| "prices".into(), |s| s.to_string_lossy().into_owned());
    prices.with_file_name(format!("{stem}_truth.csv"))
}
