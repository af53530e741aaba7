use std::path::PathBuf;

use crate::model::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("dates are not strictly increasing at row {row}")]
    NonMonotonicDates { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("no a <= {limit:e} satisfies all conditions for N={n}, eps={eps}")]
    SearchFailed { n: usize, eps: f64, limit: f64 },

    #[error("assurance violated: smooth cardinality {smooth} <= K={k} but exact cardinality {exact}")]
    AssuranceViolated {
        weights: Vec<f64>,
        smooth: f64,
        exact: usize,
        k: usize,
    },

    #[error("solver stopped after {iterations} iterations without meeting tolerances")]
    MaxIterationsExceeded {
        iterations: usize,
        best: Box<SolveReport>,
    },

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("infeasible constraint configuration: {0}")]
    InfeasibleConstraintConfig(String),

    #[error("cardinality {exact} exceeds K={k} after thresholding")]
    CardinalityExceeded { exact: usize, k: usize },

    #[error("every weight is below the cutoff {eps}")]
    AllBelowCutoff { eps: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty series")]
    EmptySeries,

    #[error("window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("ticker {0} has no price before the end of the file")]
    UnfixableLeadingGap(String),

    #[error("non-positive price for {ticker} on {date}")]
    NonPositivePrice { ticker: String, date: String },

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name, printed by the CLI as `error_code=<name>`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteEntry { .. } => "NonFiniteEntry",
            Error::NonMonotonicDates { .. } => "NonMonotonicDates",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::DomainError(_) => "DomainError",
            Error::SearchFailed { .. } => "SearchFailed",
            Error::AssuranceViolated { .. } => "AssuranceViolated",
            Error::MaxIterationsExceeded { .. } => "MaxIterationsExceeded",
            Error::DegenerateProblem(_) => "DegenerateProblem",
            Error::InfeasibleConstraintConfig(_) => "InfeasibleConstraintConfig",
            Error::CardinalityExceeded { .. } => "CardinalityExceeded",
            Error::AllBelowCutoff { .. } => "AllBelowCutoff",
            Error::InsufficientData(_) => "InsufficientData",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptySeries => "EmptySeries",
            Error::Window { source, .. } => source.code(),
            Error::ParseError { .. } => "ParseError",
            Error::EmptyFile(_) => "EmptyFile",
            Error::UnfixableLeadingGap(_) => "UnfixableLeadingGap",
            Error::NonPositivePrice { .. } => "NonPositivePrice",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
        }
    }

    /// True for failures of the numerical routines (exit code 3), false for
    /// bad input or configuration (exit code 2).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Window { source, .. } => source.is_numerical(),
            Error::SearchFailed { .. }
            | Error::AssuranceViolated { .. }
            | Error::MaxIterationsExceeded { .. }
            | Error::DegenerateProblem(_)
            | Error::CardinalityExceeded { .. }
            | Error::AllBelowCutoff { .. } => true,
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
