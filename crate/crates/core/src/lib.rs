//! Sparse index tracking with a differentiable cardinality constraint.

pub mod backtest;
pub mod baselines;
pub mod cli;
pub mod dcc;
pub mod error;
pub mod io;
pub mod model;
mod qp;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use model::{ConditionReport, DccParams, ReturnsPanel, SolveReport, Variant, WeightVector};
