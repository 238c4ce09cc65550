//! Crate-wide error type.
//!
//! Variants are grouped by the exit-code class the CLI maps them to:
//! configuration (1), data (2), solver (3).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // -- configuration ------------------------------------------------------
    #[error("config: {0}")]
    Config(String),

    #[error("config: missing key `{0}`")]
    MissingKey(String),

    #[error("config: key `{key}` has invalid value `{value}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },

    // -- data ----------------------------------------------------------------
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: String,
        actual: String,
        context: String,
    },

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("unresolved tickers (present in portfolio, absent from prices): {0:?}")]
    UnresolvedTickers(Vec<String>),

    #[error("price gap of {gap} trading days for `{ticker}` ending {date}; forward-fill limit is {limit}")]
    PriceGap {
        ticker: String,
        date: chrono::NaiveDate,
        gap: usize,
        limit: usize,
    },

    #[error("target return {z} unattainable; attainable range is [{lo}, {hi}]")]
    InfeasibleTarget { z: f64, lo: f64, hi: f64 },

    // -- solver --------------------------------------------------------------
    #[error("infeasible constraint set: max violation {max_violation:.3e}")]
    Infeasible { max_violation: f64 },

    #[error(
        "solver failed to converge after {iterations} iterations \
         (stationarity residual {stationarity:.3e}, feasibility residual {feasibility:.3e})"
    )]
    NumericalFailure {
        iterations: usize,
        stationarity: f64,
        feasibility: f64,
    },

    #[error("matrix is singular (pivot {pivot:.3e} at column {col})")]
    Singular { pivot: f64, col: usize },

    #[error(
        "inverse problem infeasible for every binary pattern; \
         big-M {big_m} is likely too small, retry with a larger value"
    )]
    IpoInfeasible { big_m: f64 },

    #[error("learning aborted at round {round} ({date}): {source}")]
    LearnRound {
        round: usize,
        date: chrono::NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    // -- io -------------------------------------------------------------------
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Exit-code class used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingKey(_) | Error::BadValue { .. } => 1,
            Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::InsufficientHistory(_)
            | Error::UnresolvedTickers(_)
            | Error::PriceGap { .. }
            | Error::InfeasibleTarget { .. }
            | Error::Io { .. } => 2,
            Error::Infeasible { .. }
            | Error::NumericalFailure { .. }
            | Error::Singular { .. }
            | Error::IpoInfeasible { .. }
            | Error::UndefinedMetric(_) => 3,
            Error::LearnRound { source, .. } => source.exit_code(),
            Error::Context { source, .. } => source.exit_code(),
        }
    }

    /// Short machine-readable kind tag for error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::MissingKey(_) => "missing_key",
            Error::BadValue { .. } => "bad_value",
            Error::Parse { .. } => "parse",
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InsufficientHistory(_) => "insufficient_history",
            Error::UnresolvedTickers(_) => "unresolved_tickers",
            Error::PriceGap { .. } => "price_gap",
            Error::InfeasibleTarget { .. } => "infeasible_target",
            Error::Infeasible { .. } => "infeasible",
            Error::NumericalFailure { .. } => "numerical_failure",
            Error::Singular { .. } => "singular",
            Error::IpoInfeasible { .. } => "ipo_infeasible",
            Error::LearnRound { .. } => "learn_round",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Context { source, .. } => source.kind(),
            Error::Io { .. } => "io",
        }
    }
}
