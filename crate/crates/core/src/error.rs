use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: header mismatch, expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate customer id `{id}`")]
    DuplicateId { id: String },

    #[error("customer `{id}` has zero demand in every month and cannot be profiled")]
    ZeroDemand { id: String },

    #[error("invalid monthly values: {0}")]
    InvalidProfile(String),

    #[error("aggregate demand has zero mean")]
    ZeroAggregateMean,

    #[error("reference distance is zero; enhancement metrics are undefined")]
    DegenerateReference,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no customer has pair keys and non-zero demand")]
    NoEligibleCustomers,

    #[error("unknown province `{0}`")]
    UnknownProvince(String),

    #[error("unknown customer id `{0}`")]
    UnknownCustomer(String),

    #[error("no target profile for pair ({nace}, {location})")]
    MissingTarget { nace: String, location: String },

    #[error("requested {requested} customers but only {available} are eligible")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("baseline median is zero at step {step}")]
    ZeroBaseline { step: usize },

    #[error("curve does not cover step {step}")]
    MissingCheckpoint { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid target spec `{spec}`: {reason}")]
    InvalidTarget { spec: String, reason: String },

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
