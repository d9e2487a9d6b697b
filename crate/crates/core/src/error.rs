use thiserror::Error;

/// Broad error categories, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Simulation,
    Analysis,
    Io,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Config => 1,
            ErrorFamily::Simulation => 2,
            ErrorFamily::Analysis => 3,
            ErrorFamily::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty spectrum: all values are zero")]
    EmptySpectrum,

    #[error("spectrum shape error: {0}")]
    Shape(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid coverage error: {lost_fraction:.4} of the density mass falls outside the grid")]
    GridCoverage { lost_fraction: f64 },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("CAR unbounded: no accidental coincidences (N_cc = {n_cc})")]
    CarUnbounded { n_cc: u64 },

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("non-positive CAR {car} at power density {power}")]
    NonPositiveCar { power: f64, car: f64 },

    #[error("no decay: slope of ln(CAR) is {slope:e}, P0 diverges")]
    NonDecay { slope: f64 },

    #[error("expected {expected} peaks, fit has {got}")]
    Arity { expected: usize, got: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config key `{key}`: {constraint}")]
    Validation { key: String, constraint: String },

    #[error("unknown {kind} `{name}` (registered: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Parse { .. } | Error::Validation { .. } | Error::UnknownStrategy { .. } => {
                ErrorFamily::Config
            }
            Error::Simulation(_) | Error::GridCoverage { .. } => ErrorFamily::Simulation,
            Error::Io(_) | Error::Json(_) | Error::Format(_) => ErrorFamily::Io,
            _ => ErrorFamily::Analysis,
        }
    }

    pub fn validation(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            constraint: constraint.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
