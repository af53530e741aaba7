//! Rolling-window backtests and tracking metrics.
//!
//! A window fits weights on the trailing `lookback_days` rows and holds them
//! for the next `rebalance_days` rows (the last hold may be shorter). Hold
//! spans tile the rows after the first lookback exactly once.

use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{backward_selection, forward_selection};
use crate::error::{Error, Result};
use crate::model::{DccParams, ReturnsPanel, SolveReport, Variant, WeightVector};
use crate::solver::{full_replication, partial_replication_dcc, SolverOptions};

pub const TRADING_DAYS_PER_YEAR: usize = 252;
pub const TRADING_DAYS_PER_QUARTER: usize = 63;
/// Level both series are rebased to at the start of the evaluation span.
pub const BASE_LEVEL: f64 = 100.0;

/// Row ranges of one rebalance, all half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub fit_start: usize,
    pub fit_end: usize,
    pub hold_start: usize,
    pub hold_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub windows: Vec<Window>,
    pub lookback_days: usize,
    pub rebalance_days: usize,
}

impl Schedule {
    /// First held row through the last row of the panel.
    pub fn evaluation_range(&self) -> std::ops::Range<usize> {
        let first = self.windows.first().map_or(0, |w| w.hold_start);
        let last = self.windows.last().map_or(0, |w| w.hold_end);
        first..last
    }
}

pub fn make_schedule(dates: &[NaiveDate], lookback_days: usize, rebalance_days: usize) -> Result<Schedule> {
    if lookback_days < 2 || rebalance_days < 1 {
        return Err(Error::InvalidParameter(format!(
            "need lookback >= 2 and rebalance >= 1, got {lookback_days} and {rebalance_days}"
        )));
    }
    let d = dates.len();
    if d <= lookback_days {
        return Err(Error::InsufficientData(format!(
            "{d} rows leave no hold days after a lookback of {lookback_days}"
        )));
    }
    let windows = (lookback_days..d)
        .step_by(rebalance_days)
        .map(|start| Window {
            fit_start: start - lookback_days,
            fit_end: start,
            hold_start: start,
            hold_end: (start + rebalance_days).min(d),
        })
        .collect();
    Ok(Schedule {
        windows,
        lookback_days,
        rebalance_days,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dcc,
    Forward,
    Backward,
    Full,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dcc, Method::Forward, Method::Backward, Method::Full];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dcc => "dcc",
            Method::Forward => "forward",
            Method::Backward => "backward",
            Method::Full => "full",
        }
    }
}

/// Everything a fit needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub k: usize,
    pub a: f64,
    pub eps: f64,
    pub variant: Variant,
    pub solver: SolverOptions,
}

/// One fit with the chosen method on a whole panel.
pub fn fit(panel: &ReturnsPanel, method: Method, params: &FitParams) -> Result<SolveReport> {
    match method {
        Method::Full => full_replication(panel, &params.solver),
        Method::Forward => forward_selection(panel, params.k, &params.solver),
        Method::Backward => backward_selection(panel, params.k, &params.solver),
        Method::Dcc => {
            let p = DccParams::new(params.a, params.eps, params.k, panel.n_stocks(), params.variant)?;
            partial_replication_dcc(panel, &p, &params.solver)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cumulative_return: f64,
    pub volatility: f64,
    /// Absent when the series has zero volatility.
    pub sharpe: Option<f64>,
    pub mdd: f64,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub method: Method,
    /// Held dates, one per evaluation row.
    pub dates: Vec<NaiveDate>,
    /// Daily portfolio returns over the evaluation span.
    pub tracking: Vec<f64>,
    pub target: Vec<f64>,
    /// Levels after each held day, rebased so the day before is 100.
    pub tracking_levels: Vec<f64>,
    pub target_levels: Vec<f64>,
    /// Index of the window whose weights produced each held day.
    pub weight_source: Vec<usize>,
    pub rebalance_dates: Vec<NaiveDate>,
    pub fits: Vec<SolveReport>,
    pub mae: f64,
    pub metrics: Metrics,
    pub target_metrics: Metrics,
    pub per_rebalance_wall_time: Vec<f64>,
}

impl BacktestResult {
    pub fn weights_per_rebalance(&self) -> impl Iterator<Item = &WeightVector> {
        self.fits.iter().map(|f| &f.weights)
    }
}

/// Fits every window (on up to `jobs` threads) and stitches the held
/// returns together in date order.
pub fn run_backtest(
    panel: &ReturnsPanel,
    method: Method,
    params: &FitParams,
    schedule: &Schedule,
    jobs: usize,
) -> Result<BacktestResult> {
    if let Some(w) = schedule.windows.last() {
        if w.hold_end > panel.n_days() {
            return Err(Error::InsufficientData(format!(
                "schedule reaches row {} but the panel has {}",
                w.hold_end,
                panel.n_days()
            )));
        }
    }
    if schedule.windows.is_empty() {
        return Err(Error::InsufficientData("schedule has no windows".into()));
    }

    let fit_window = |(i, w): (usize, &Window)| -> Result<(SolveReport, f64)> {
        let started = Instant::now();
        let report = panel
            .rows(w.fit_start, w.fit_end)
            .and_then(|sub| fit(&sub, method, params))
            .map_err(|e| Error::Window {
                window: i,
                source: Box::new(e),
            })?;
        Ok((report, started.elapsed().as_secs_f64()))
    };
    let fitted: Vec<Result<(SolveReport, f64)>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| schedule.windows.par_iter().enumerate().map(fit_window).collect())
    } else {
        schedule.windows.iter().enumerate().map(fit_window).collect()
    };
    let mut fits = Vec::with_capacity(fitted.len());
    let mut per_rebalance_wall_time = Vec::with_capacity(fitted.len());
    for r in fitted {
        let (report, secs) = r?;
        fits.push(report);
        per_rebalance_wall_time.push(secs);
    }

    let range = schedule.evaluation_range();
    let mut tracking = Vec::with_capacity(range.len());
    let mut weight_source = Vec::with_capacity(range.len());
    for (i, (w, report)) in schedule.windows.iter().zip(&fits).enumerate() {
        let weights = report.weights.to_dvector();
        for t in w.hold_start..w.hold_end {
            tracking.push(panel.returns.row(t).transpose().dot(&weights));
            weight_source.push(i);
        }
    }
    let target: Vec<f64> = panel.target.as_slice()[range.clone()].to_vec();
    let tracking_levels = levels(&tracking);
    let target_levels = levels(&target);
    Ok(BacktestResult {
        method,
        dates: panel.dates[range].to_vec(),
        mae: mae(&tracking_levels, &target_levels)?,
        metrics: metrics(&tracking)?,
        target_metrics: metrics(&target)?,
        tracking,
        target,
        tracking_levels,
        target_levels,
        weight_source,
        rebalance_dates: schedule.windows.iter().map(|w| panel.dates[w.hold_start]).collect(),
        fits,
        per_rebalance_wall_time,
    })
}

/// Compounded levels starting from [`BASE_LEVEL`], one per return.
pub fn levels(returns: &[f64]) -> Vec<f64> {
    returns
        .iter()
        .scan(BASE_LEVEL, |level, r| {
            *level *= 1.0 + r;
            Some(*level)
        })
        .collect()
}

/// Mean absolute difference of two level series.
pub fn mae(tracking: &[f64], target: &[f64]) -> Result<f64> {
    if tracking.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: tracking.len(),
            right: target.len(),
        });
    }
    if tracking.is_empty() {
        return Err(Error::EmptySeries);
    }
    let total: f64 = tracking.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / tracking.len() as f64)
}

pub fn metrics(returns: &[f64]) -> Result<Metrics> {
    if returns.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = returns.len() as f64;
    let cumulative_return = returns.iter().map(|r| 1.0 + r).product::<f64>() - 1.0;
    let mean = returns.iter().sum::<f64>() / n;
    let constant = returns.iter().all(|&r| r == returns[0]);
    let volatility = if constant {
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() * (TRADING_DAYS_PER_YEAR as f64).sqrt()
    };
    let sharpe = (volatility > 0.0).then(|| mean * TRADING_DAYS_PER_YEAR as f64 / volatility);
    let mut level = 1.0_f64;
    let mut peak = 1.0_f64;
    let mut mdd = 0.0_f64;
    for r in returns {
        level *= 1.0 + r;
        peak = peak.max(level);
        mdd = mdd.max(1.0 - level / peak);
    }
    Ok(Metrics {
        cumulative_return,
        volatility,
        sharpe,
        mdd: mdd.clamp(0.0, 1.0),
    })
}

/// Sum over stocks of `w_i * max_j |m_i - m_j|`, with `m` the mean daily
/// returns and `j` running over the held stocks.
pub fn tracking_error_upper_bound(panel: &ReturnsPanel, w: &WeightVector) -> Result<f64> {
    if w.len() != panel.n_stocks() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: panel.n_stocks(),
        });
    }
    let means = panel.column_means();
    let held = w.support();
    Ok(w
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, wi)| {
            let spread = held.iter().map(|&j| (means[i] - means[j]).abs()).fold(0.0, f64::max);
            spread * wi
        })
        .sum())
}
