//! Price ingestion, run configuration and report files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value read back parses to the identical `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backtest::{BacktestResult, Method, Metrics};
use crate::error::{Error, Result};
use crate::model::{ConditionReport, ReturnsPanel, SolveReport, Variant, DEFAULT_EPS};
use crate::solver::SolverOptions;

/// Dense prices, one row per date and one column per ticker in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub prices: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadEvent {
    /// A blank cell replaced by the previous row's price.
    Filled { date: NaiveDate, ticker: String },
    /// A leading row dropped because these tickers had no price yet.
    Dropped { date: NaiveDate, missing: Vec<String> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub events: Vec<LoadEvent>,
}

impl LoadReport {
    pub fn filled(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, LoadEvent::Filled { .. })).count()
    }

    pub fn dropped(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, LoadEvent::Dropped { .. })).count()
    }
}

/// Reads `date,TICKER1,TICKER2,...` with ISO dates. Blank cells (or `NA`,
/// `NaN`, `null`) are forward-filled; rows before every ticker has a price
/// are dropped. Both are listed in the returned report.
pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<(PriceTable, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(&e, 1))?.clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::ParseError {
            line: 1,
            column: 1,
            message: "header must be date,TICKER1,...".into(),
        });
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let n = tickers.len();

    let mut report = LoadReport::default();
    let mut dates = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut last: Option<Vec<f64>> = None;
    let mut saw_row = false;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        saw_row = true;
        let date = NaiveDate::parse_from_str(record.get(0).unwrap_or("").trim(), "%Y-%m-%d").map_err(|e| {
            Error::ParseError {
                line,
                column: 1,
                message: format!("bad date: {e}"),
            }
        })?;
        let mut row = Vec::with_capacity(n);
        for (j, cell) in record.iter().skip(1).enumerate() {
            row.push(parse_cell(cell, line, j + 2)?);
        }
        let missing: Vec<usize> = (0..n).filter(|&j| row[j].is_none()).collect();
        let filled: Vec<f64> = match &last {
            Some(prev) => {
                for &j in &missing {
                    report.events.push(LoadEvent::Filled {
                        date,
                        ticker: tickers[j].clone(),
                    });
                }
                row.iter().zip(prev).map(|(v, p)| v.unwrap_or(*p)).collect()
            }
            None if !missing.is_empty() => {
                report.events.push(LoadEvent::Dropped {
                    date,
                    missing: missing.iter().map(|&j| tickers[j].clone()).collect(),
                });
                continue;
            }
            None => row.iter().map(|v| v.expect("no missing cells")).collect(),
        };
        dates.push(date);
        values.extend_from_slice(&filled);
        last = Some(filled);
    }
    if !saw_row {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if dates.is_empty() {
        let culprit = report
            .events
            .iter()
            .rev()
            .find_map(|e| match e {
                LoadEvent::Dropped { missing, .. } => missing.first().cloned(),
                LoadEvent::Filled { .. } => None,
            })
            .unwrap_or_default();
        return Err(Error::UnfixableLeadingGap(culprit));
    }
    for event in &report.events {
        match event {
            LoadEvent::Filled { date, ticker } => warn!("{}: forward-filled {ticker} on {date}", path.display()),
            LoadEvent::Dropped { date, missing } => {
                warn!("{}: dropped {date}, no price yet for {}", path.display(), missing.join(","))
            }
        }
    }
    let prices = DMatrix::from_row_slice(dates.len(), n, &values);
    Ok((PriceTable { dates, tickers, prices }, report))
}

fn parse_cell(cell: &str, line: usize, column: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || ["na", "nan", "null"].contains(&cell.to_ascii_lowercase().as_str()) {
        return Ok(None);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::ParseError {
            line,
            column,
            message: format!("not a price: {cell:?}"),
        })
}

fn csv_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::ParseError {
        line,
        column: 0,
        message: e.to_string(),
    }
}

impl PriceTable {
    /// Appends the columns of `other`, which must cover the same dates.
    pub fn join(mut self, other: &PriceTable) -> Result<PriceTable> {
        if self.dates != other.dates {
            return Err(Error::DimensionMismatch("price files cover different dates".into()));
        }
        let rows = self.dates.len();
        let cols = self.tickers.len() + other.tickers.len();
        let mut prices = DMatrix::zeros(rows, cols);
        prices.columns_mut(0, self.tickers.len()).copy_from(&self.prices);
        prices.columns_mut(self.tickers.len(), other.tickers.len()).copy_from(&other.prices);
        self.tickers.extend(other.tickers.iter().cloned());
        self.prices = prices;
        Ok(self)
    }
}

/// Simple daily returns of every column, with `target_column` split off as
/// the index. Row `t` of the panel is dated by the later price row.
pub fn to_returns(prices: &PriceTable, target_column: &str) -> Result<ReturnsPanel> {
    let rows = prices.dates.len();
    if rows < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 price rows, got {rows}")));
    }
    let target_idx = prices
        .tickers
        .iter()
        .position(|t| t == target_column)
        .ok_or_else(|| Error::UnknownColumn(target_column.to_string()))?;
    for (j, ticker) in prices.tickers.iter().enumerate() {
        if let Some(t) = (0..rows).find(|&t| prices.prices[(t, j)] <= 0.0) {
            return Err(Error::NonPositivePrice {
                ticker: ticker.clone(),
                date: prices.dates[t].to_string(),
            });
        }
    }
    let simple = |j: usize, t: usize| prices.prices[(t + 1, j)] / prices.prices[(t, j)] - 1.0;
    let stocks: Vec<usize> = (0..prices.tickers.len()).filter(|&j| j != target_idx).collect();
    let d = rows - 1;
    let returns = DMatrix::from_fn(d, stocks.len(), |t, c| simple(stocks[c], t));
    let target = DVector::from_fn(d, |t, _| simple(target_idx, t));
    let tickers = stocks.iter().map(|&j| prices.tickers[j].clone()).collect();
    ReturnsPanel::new(returns, target, prices.dates[1..].to_vec(), tickers)
}

/// Steepness given explicitly or found by the minimal-`a` search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Steepness {
    Auto,
    Value(f64),
}

impl FromStr for Steepness {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Steepness::Auto);
        }
        s.parse::<f64>()
            .map(Steepness::Value)
            .map_err(|_| format!("expected a number or \"auto\", got {s:?}"))
    }
}

impl Serialize for Steepness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Steepness::Auto => s.serialize_str("auto"),
            Steepness::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Steepness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Steepness::Value(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which methods a run fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Dcc,
    Forward,
    Backward,
    Full,
    All,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Dcc => vec![Method::Dcc],
            MethodChoice::Forward => vec![Method::Forward],
            MethodChoice::Backward => vec![Method::Backward],
            MethodChoice::Full => vec![Method::Full],
            MethodChoice::All => Method::ALL.to_vec(),
        }
    }
}

/// A backtest run as read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Price CSV; relative paths resolve against the config file.
    pub data_path: Option<PathBuf>,
    /// Second CSV holding the index column, if not in `data_path`.
    pub index_path: Option<PathBuf>,
    pub target: String,
    pub method: MethodChoice,
    pub k: usize,
    pub a: Steepness,
    pub eps: f64,
    pub variant: Variant,
    pub lookback_days: usize,
    pub rebalance_days: usize,
    pub max_iterations: usize,
    pub tol_objective: f64,
    pub tol_feasibility: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        RunConfig {
            data_path: None,
            index_path: None,
            target: "INDEX".into(),
            method: MethodChoice::Dcc,
            k: 15,
            a: Steepness::Auto,
            eps: DEFAULT_EPS,
            variant: Variant::Sigmoid,
            lookback_days: crate::backtest::TRADING_DAYS_PER_YEAR,
            rebalance_days: crate::backtest::TRADING_DAYS_PER_QUARTER,
            max_iterations: solver.max_iterations,
            tol_objective: solver.tol_objective,
            tol_feasibility: solver.tol_feasibility,
            output_dir: PathBuf::from("out"),
            seed: 0,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data_path, &mut cfg.index_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iterations: self.max_iterations,
            tol_objective: self.tol_objective,
            tol_feasibility: self.tol_feasibility,
            initial_weights: None,
        }
    }

    /// Checks the fields that need no data: paths exist and numbers are in range.
    pub fn validate(&self) -> Result<()> {
        let data = self
            .data_path
            .as_ref()
            .ok_or_else(|| Error::Config("data_path is required".into()))?;
        for p in std::iter::once(data).chain(&self.index_path) {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        self.solver_options().validate()?;
        if let Steepness::Value(a) = self.a {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidParameter(format!("a must be > 0, got {a}")));
            }
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        if self.k < 1 {
            return Err(Error::InfeasibleConstraintConfig(format!("K must be >= 1, got {}", self.k)));
        }
        if self.lookback_days < 2 || self.rebalance_days < 1 || self.jobs < 1 {
            return Err(Error::InvalidParameter(
                "lookback_days >= 2, rebalance_days >= 1 and jobs >= 1 are required".into(),
            ));
        }
        Ok(())
    }

    /// Loads `data_path` (joined with `index_path` when set) as returns.
    pub fn load_panel(&self) -> Result<ReturnsPanel> {
        let data = self
            .data_path
            .as_ref()
            .ok_or_else(|| Error::Config("data_path is required".into()))?;
        let (mut prices, _) = load_prices_csv(data)?;
        if let Some(index) = &self.index_path {
            let (other, _) = load_prices_csv(index)?;
            prices = prices.join(&other)?;
        }
        to_returns(&prices, &self.target)
    }
}

/// Steepness actually used and the conditions it meets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteepnessChoice {
    pub a: f64,
    pub searched: bool,
    pub conditions: ConditionReport,
}

/// Run-level values echoed into `summary.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEcho {
    pub method: Method,
    pub k: usize,
    pub eps: f64,
    pub variant: Variant,
    pub steepness: SteepnessChoice,
    pub n_stocks: usize,
    pub n_days: usize,
    pub lookback_days: Option<usize>,
    pub rebalance_days: Option<usize>,
    pub seed: u64,
}

/// Writes a single fit over `panel`: `weights_<last date>.csv`, the
/// in-sample `tracking.csv`, `summary.json` and `timings.json`.
pub fn write_solve_report(
    report: &SolveReport,
    panel: &ReturnsPanel,
    echo: &RunEcho,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let last = *panel.dates.last().ok_or(Error::EmptySeries)?;
    let weights_path = dir.join(format!("weights_{last}.csv"));
    write_weights(&weights_path, &panel.tickers, report.weights.as_slice())?;

    let w = report.weights.to_dvector();
    let tracking: Vec<f64> = (&panel.returns * &w).iter().copied().collect();
    let tracking_levels = crate::backtest::levels(&tracking);
    let target_levels = crate::backtest::levels(panel.target.as_slice());
    let tracking_path = dir.join("tracking.csv");
    write_tracking(&tracking_path, &panel.dates, &tracking_levels, &target_levels)?;

    let mut summary = echo_fields(echo);
    summary.insert("objective".into(), json!(report.objective));
    summary.insert("kkt_residual".into(), json!(report.kkt_residual));
    summary.insert("iterations".into(), json!(report.iterations));
    summary.insert("smooth_cardinality".into(), json!(report.smooth_cardinality));
    summary.insert("exact_cardinality".into(), json!(report.exact_cardinality));
    summary.insert("full_replications".into(), json!(report.full_replications));
    summary.insert("mae".into(), json!(crate::backtest::mae(&tracking_levels, &target_levels)?));
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;

    let timings_path = dir.join("timings.json");
    let mut timings = BTreeMap::new();
    timings.insert("wall_time_seconds".to_string(), json!(report.wall_time_seconds));
    write_json(&timings_path, &timings)?;
    Ok(vec![weights_path, tracking_path, summary_path, timings_path])
}

/// Writes a backtest: one `weights_<date>.csv` per rebalance, the held-day
/// `tracking.csv`, `summary.json` and `timings.json`.
pub fn write_backtest_report(result: &BacktestResult, tickers: &[String], echo: &RunEcho, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (date, fit) in result.rebalance_dates.iter().zip(&result.fits) {
        let path = dir.join(format!("weights_{date}.csv"));
        write_weights(&path, tickers, fit.weights.as_slice())?;
        paths.push(path);
    }
    let tracking_path = dir.join("tracking.csv");
    write_tracking(&tracking_path, &result.dates, &result.tracking_levels, &result.target_levels)?;
    paths.push(tracking_path);

    let mut summary = echo_fields(echo);
    summary.insert("mae".into(), json!(result.mae));
    summary.insert("rebalances".into(), json!(result.fits.len()));
    summary.insert("hold_days".into(), json!(result.dates.len()));
    summary.insert(
        "max_exact_cardinality".into(),
        json!(result.fits.iter().map(|f| f.exact_cardinality).max().unwrap_or(0)),
    );
    insert_metrics(&mut summary, "", &result.metrics);
    insert_metrics(&mut summary, "target_", &result.target_metrics);
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    paths.push(summary_path);

    let mut timings = BTreeMap::new();
    timings.insert("total_wall_time_seconds".to_string(), json!(result.per_rebalance_wall_time.iter().sum::<f64>()));
    timings.insert("per_rebalance_wall_time_seconds".to_string(), json!(result.per_rebalance_wall_time));
    let timings_path = dir.join("timings.json");
    write_json(&timings_path, &timings)?;
    paths.push(timings_path);
    Ok(paths)
}

fn echo_fields(echo: &RunEcho) -> BTreeMap<String, Value> {
    let c = &echo.steepness.conditions;
    let mut m = BTreeMap::new();
    m.insert("method".into(), json!(echo.method.name()));
    m.insert("k".into(), json!(echo.k));
    m.insert("a".into(), json!(echo.steepness.a));
    m.insert("a_searched".into(), json!(echo.steepness.searched));
    m.insert("eps".into(), json!(echo.eps));
    m.insert("variant".into(), json!(echo.variant));
    m.insert("n_stocks".into(), json!(echo.n_stocks));
    m.insert("n_days".into(), json!(echo.n_days));
    m.insert("lookback_days".into(), json!(echo.lookback_days));
    m.insert("rebalance_days".into(), json!(echo.rebalance_days));
    m.insert("seed".into(), json!(echo.seed));
    m.insert("c0".into(), json!(c.c0));
    m.insert("c1".into(), json!(c.c1));
    m.insert("c2".into(), json!(c.c2));
    m.insert("error_integral".into(), json!(c.error_integral));
    m.insert("n_times_e".into(), json!(c.n_times_e));
    m.insert("min_a_overall".into(), json!(c.min_a_overall));
    m
}

fn insert_metrics(m: &mut BTreeMap<String, Value>, prefix: &str, metrics: &Metrics) {
    m.insert(format!("{prefix}cumulative_return"), json!(metrics.cumulative_return));
    m.insert(format!("{prefix}volatility"), json!(metrics.volatility));
    m.insert(format!("{prefix}sharpe"), json!(metrics.sharpe));
    m.insert(format!("{prefix}mdd"), json!(metrics.mdd));
}

/// `ticker,weight`, nonzero weights only.
fn write_weights(path: &Path, tickers: &[String], w: &[f64]) -> Result<()> {
    let mut out = String::from("ticker,weight\n");
    for (t, &v) in tickers.iter().zip(w) {
        if v != 0.0 {
            out.push_str(&format!("{t},{v}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_tracking(path: &Path, dates: &[NaiveDate], tracking: &[f64], target: &[f64]) -> Result<()> {
    let mut out = String::from("date,tracking_level,target_level,abs_error\n");
    for ((d, a), b) in dates.iter().zip(tracking).zip(target) {
        out.push_str(&format!("{d},{a},{b},{}\n", (a - b).abs()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A `tracking.csv` read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSeries {
    pub dates: Vec<NaiveDate>,
    pub tracking_levels: Vec<f64>,
    pub target_levels: Vec<f64>,
}

pub fn read_tracking_csv(path: impl AsRef<Path>) -> Result<TrackingSeries> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    let mut series = TrackingSeries {
        dates: Vec::new(),
        tracking_levels: Vec::new(),
        target_levels: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |column: usize| Error::ParseError {
            line,
            column,
            message: "malformed tracking row".into(),
        };
        series
            .dates
            .push(NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|_| bad(1))?);
        series.tracking_levels.push(field(1).parse().map_err(|_| bad(2))?);
        series.target_levels.push(field(2).parse().map_err(|_| bad(3))?);
    }
    Ok(series)
}

/// Writes the planted weights as `ticker,weight` for every stock.
pub fn write_truth(path: impl AsRef<Path>, tickers: &[String], truth: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("ticker,weight\n");
    for (t, v) in tickers.iter().zip(truth) {
        out.push_str(&format!("{t},{v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a price table with the index as the last column.
pub fn write_prices_csv(
    path: impl AsRef<Path>,
    dates: &[NaiveDate],
    tickers: &[String],
    prices: &DMatrix<f64>,
    index_name: &str,
    index: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("date");
    for t in tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push_str(&format!(",{index_name}\n"));
    for (r, d) in dates.iter().enumerate() {
        out.push_str(&d.to_string());
        for c in 0..tickers.len() {
            out.push_str(&format!(",{}", prices[(r, c)]));
        }
        out.push_str(&format!(",{}\n", index[r]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn clean_file_loads_without_events() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,A,B\n2020-01-01,1,2\n2020-01-02,1.5,2.5\n2020-01-03,2,3\n");
        let (table, report) = load_prices_csv(&p).unwrap();
        assert_eq!(table.prices.shape(), (3, 2));
        assert_eq!(table.tickers, ["A", "B"]);
        assert_eq!(table.prices[(1, 1)], 2.5);
        assert!(report.events.is_empty());
    }

    #[test]
    fn gap_mid_series_is_forward_filled() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,A,B\n2020-01-01,1,2\n2020-01-02,,2.5\n2020-01-03,2,3\n");
        let (table, report) = load_prices_csv(&p).unwrap();
        assert_eq!(table.prices[(1, 0)], 1.0);
        assert_eq!(report.filled(), 1);
        assert_eq!(report.dropped(), 0);
    }

    #[test]
    fn leading_gap_drops_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "date,A,B\n2020-01-01,,2\n2020-01-02,1,2.5\n2020-01-03,2,3\n");
        let (table, report) = load_prices_csv(&p).unwrap();
        assert_eq!(table.dates.len(), 2);
        assert_eq!(
            report.events,
            vec![LoadEvent::Dropped {
                date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                missing: vec!["A".into()],
            }]
        );
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(&dir, "e.csv", "");
        assert_eq!(load_prices_csv(&empty).unwrap_err().code(), "EmptyFile");
        let header_only = write(&dir, "h.csv", "date,A\n");
        assert_eq!(load_prices_csv(&header_only).unwrap_err().code(), "EmptyFile");
        let never = write(&dir, "n.csv", "date,A,B\n2020-01-01,1,\n2020-01-02,1,\n");
        match load_prices_csv(&never).unwrap_err() {
            Error::UnfixableLeadingGap(t) => assert_eq!(t, "B"),
            e => panic!("{e}"),
        }
        let bad = write(&dir, "b.csv", "date,A,B\n2020-01-01,1,2\n2020-01-02,1,x\n");
        match load_prices_csv(&bad).unwrap_err() {
            Error::ParseError { line, column, .. } => assert_eq!((line, column), (3, 3)),
            e => panic!("{e}"),
        }
        assert_eq!(load_prices_csv(dir.path().join("missing.csv")).unwrap_err().code(), "IoError");
    }

    fn table(prices: &[f64]) -> PriceTable {
        let rows = prices.len() / 3;
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        PriceTable {
            dates: start.iter_days().take(rows).collect(),
            tickers: vec!["A".into(), "B".into(), "IDX".into()],
            prices: DMatrix::from_row_slice(rows, 3, prices),
        }
    }

    #[test]
    fn returns_examples() {
        let panel = to_returns(&table(&[100.0, 7.0, 50.0, 110.0, 7.0, 50.0, 121.0, 7.0, 50.0]), "IDX").unwrap();
        assert!((panel.returns[(0, 0)] - 0.10).abs() < 1e-15);
        assert_eq!(panel.returns.column(1).as_slice(), &[0.0, 0.0]);
        assert_eq!(panel.target.as_slice(), &[0.0, 0.0]);
        assert_eq!(panel.tickers, ["A", "B"]);
        assert_eq!(panel.dates[0], NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());

        let zero = table(&[100.0, 7.0, 50.0, 0.0, 7.0, 50.0, 121.0, 7.0, 50.0]);
        assert_eq!(to_returns(&zero, "IDX").unwrap_err().code(), "NonPositivePrice");
        assert_eq!(to_returns(&zero, "X").unwrap_err().code(), "UnknownColumn");
        assert_eq!(to_returns(&table(&[1.0, 1.0, 1.0]), "IDX").unwrap_err().code(), "InsufficientData");
    }

    #[test]
    fn config_defaults_and_steepness() {
        let cfg: RunConfig = toml::from_str("k = 5\na = 1e6\n").unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.a, Steepness::Value(1e6));
        assert_eq!(cfg.lookback_days, 252);
        let cfg: RunConfig = toml::from_str("a = \"auto\"\nmethod = \"all\"").unwrap();
        assert_eq!(cfg.a, Steepness::Auto);
        assert_eq!(cfg.method.methods().len(), 4);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("a = \"steep\"").is_err());
    }
}
