use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface, grouped by the CLI exit code it maps to.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("invalid extract spec: {0}")]
    Spec(String),

    #[error("CPI series has no value for {year}")]
    CpiGap { year: i32 },

    #[error("CPI series has no value for the reference year {year}")]
    MissingReferenceYear { year: i32 },

    #[error("state {state} has {count} rent observation(s); interpolation needs at least 2")]
    SparseRent { state: String, count: usize },

    #[error("regional price parity: {0}")]
    Rpp(String),

    #[error("missing deflator for {state} {year}: {what}")]
    MissingDeflator {
        state: String,
        year: i32,
        what: &'static str,
    },

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("{0}")]
    Numeric(String),

    #[error("age standardization for {state} {year}: no households in required bin(s) {}", bins.join(", "))]
    EmptyAgeBins {
        state: String,
        year: i32,
        bins: Vec<String>,
    },

    #[error("resample mode requires a seed")]
    MissingSeed,

    #[error("total weight is zero")]
    ZeroWeight,

    #[error("Gini undefined for zero-mean input")]
    ZeroMean,

    #[error("negative income {0} not permitted here")]
    NegativeIncome(f64),

    #[error("no data for reference year {0}")]
    MissingReference(i32),

    #[error("zero population for {state} {year}")]
    ZeroPopulation { state: String, year: i32 },

    #[error("input grids disagree; missing cells: {}", cells.join(", "))]
    GridMismatch { cells: Vec<String> },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::MissingSeed => 2,
            Error::RankDeficient { .. } | Error::Numeric(_) | Error::ZeroMean => 4,
            _ => 3,
        }
    }
}
