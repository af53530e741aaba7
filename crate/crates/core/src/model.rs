//! Shared domain types.
//!
//! Every type validates itself on construction; once built, values are
//! immutable and can be shared freely between threads.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cutoff below which a weight counts as not held.
pub const DEFAULT_EPS: f64 = 1e-4;

/// Slack allowed on linear constraints (sum-to-one, nonnegativity).
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Daily simple returns of N stocks over D days plus the index being tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    /// D×N, one row per trading day.
    pub returns: DMatrix<f64>,
    /// Length D.
    pub target: DVector<f64>,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
}

impl ReturnsPanel {
    pub fn new(
        returns: DMatrix<f64>,
        target: DVector<f64>,
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
    ) -> Result<Self> {
        validate_panel(ReturnsPanel {
            returns,
            target,
            dates,
            tickers,
        })
    }

    /// Builds a panel with consecutive calendar dates starting 2000-01-03 and
    /// tickers `S0..S{N-1}`. Convenient for synthetic data.
    pub fn from_matrix(returns: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        let dates = start.iter_days().take(returns.nrows()).collect();
        let tickers = (0..returns.ncols()).map(|i| format!("S{i}")).collect();
        Self::new(returns, target, dates, tickers)
    }

    pub fn n_days(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_stocks(&self) -> usize {
        self.returns.ncols()
    }

    /// Rows `start..end`, keeping every stock.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_days() {
            return Err(Error::InvalidParameter(format!(
                "row range {start}..{end} outside 0..{}",
                self.n_days()
            )));
        }
        let len = end - start;
        Self::new(
            self.returns.rows(start, len).into_owned(),
            self.target.rows(start, len).into_owned(),
            self.dates[start..end].to_vec(),
            self.tickers.clone(),
        )
    }

    /// Restricts the panel to the given stock columns, in the given order.
    /// Unlike [`ReturnsPanel::new`] this allows a single column, which the
    /// selection baselines need for their final refit.
    pub fn columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() || cols.iter().any(|&c| c >= self.n_stocks()) {
            return Err(Error::InvalidParameter(format!(
                "column selection {cols:?} invalid for N={}",
                self.n_stocks()
            )));
        }
        Ok(ReturnsPanel {
            returns: self.returns.select_columns(cols),
            target: self.target.clone(),
            dates: self.dates.clone(),
            tickers: cols.iter().map(|&c| self.tickers[c].clone()).collect(),
        })
    }

    /// Mean daily return of every stock.
    pub fn column_means(&self) -> DVector<f64> {
        let d = self.n_days() as f64;
        DVector::from_iterator(
            self.n_stocks(),
            self.returns.column_iter().map(|c| c.sum() / d),
        )
    }
}

/// Checks the panel invariants and hands the panel back unchanged.
pub fn validate_panel(panel: ReturnsPanel) -> Result<ReturnsPanel> {
    let (d, n) = panel.returns.shape();
    if d < 2 || n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "panel must have at least 2 days and 2 stocks, got {d}x{n}"
        )));
    }
    if panel.target.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "target has {} rows, returns have {d}",
            panel.target.len()
        )));
    }
    if panel.dates.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} dates for {d} rows",
            panel.dates.len()
        )));
    }
    if panel.tickers.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} tickers for {n} columns",
            panel.tickers.len()
        )));
    }
    for row in 0..d {
        for col in 0..n {
            if !panel.returns[(row, col)].is_finite() {
                return Err(Error::NonFiniteEntry { row, col });
            }
        }
        // The target is reported as column N.
        if !panel.target[row].is_finite() {
            return Err(Error::NonFiniteEntry { row, col: n });
        }
    }
    if let Some(row) = (1..d).find(|&r| panel.dates[r] <= panel.dates[r - 1]) {
        return Err(Error::NonMonotonicDates { row });
    }
    Ok(panel)
}

/// Long-only, fully invested portfolio weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    w: Vec<f64>,
    eps: f64,
}

impl WeightVector {
    pub fn new(w: Vec<f64>, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if w.is_empty() {
            return Err(Error::InvalidParameter("empty weight vector".into()));
        }
        if let Some((i, v)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < -FEASIBILITY_TOL)
        {
            return Err(Error::InvalidParameter(format!("weight {i} = {v}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > FEASIBILITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(WeightVector { w, eps })
    }

    /// Equal weights 1/N.
    pub fn uniform(n: usize, eps: f64) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n], eps)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Indices with nonzero weight, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.w.len()).filter(|&i| self.w[i] != 0.0).collect()
    }

    /// Scatters weights over a subset of `n` stocks into a full-length vector.
    pub fn scatter(sub: &WeightVector, columns: &[usize], n: usize) -> Result<Self> {
        if sub.len() != columns.len() {
            return Err(Error::LengthMismatch {
                left: sub.len(),
                right: columns.len(),
            });
        }
        let mut w = vec![0.0; n];
        for (&c, &v) in columns.iter().zip(sub.as_slice()) {
            w[c] = v;
        }
        Self::new(w, sub.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `1 - 1/(a w + 1)`, exact zero at the origin but blind to the cutoff.
    Rational,
    /// Shifted sigmoid centred on the cutoff.
    Sigmoid,
}

/// Parameters of the smooth cardinality constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DccParams {
    pub a: f64,
    pub eps: f64,
    pub k: usize,
    pub variant: Variant,
}

impl DccParams {
    /// Validates against the number of stocks `n` the constraint will be used with.
    pub fn new(a: f64, eps: f64, k: usize, n: usize, variant: Variant) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!("a must be > 0, got {a}")));
        }
        check_eps(eps)?;
        if k < 1 || k >= n {
            return Err(Error::InfeasibleConstraintConfig(format!(
                "K must satisfy 1 <= K < N={n}, got {k}"
            )));
        }
        Ok(DccParams { a, eps, k, variant })
    }

    pub fn sigmoid(a: f64, eps: f64, k: usize, n: usize) -> Result<Self> {
        Self::new(a, eps, k, n, Variant::Sigmoid)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "eps must lie in (0, 0.5), got {eps}"
        )))
    }
}

/// Which hyperparameter conditions a given steepness satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// All-zero portfolio is counted as at most `eps`.
    pub c0: bool,
    /// All-one vector is counted as at least `N - eps`.
    pub c1: bool,
    /// `error_integral <= 1/N`.
    pub c2: bool,
    /// Integral over [0, 1] of the gap between the step and its sigmoid.
    pub error_integral: f64,
    pub n_times_e: f64,
    /// Smallest `a` satisfying every condition, when it was searched for.
    pub min_a_overall: Option<f64>,
}

impl ConditionReport {
    pub fn all(&self) -> bool {
        self.c0 && self.c1 && self.c2
    }
}

/// Outcome of a single portfolio fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub weights: WeightVector,
    /// `||X w - y||^2` at the returned weights.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Smooth cardinality of the returned weights (zero when no constraint applies).
    pub smooth_cardinality: f64,
    pub exact_cardinality: usize,
    pub wall_time_seconds: f64,
    /// Number of full-replication fits performed (baselines run several).
    pub full_replications: usize,
}
