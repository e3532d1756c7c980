use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("transverse metric lost positivity at node {node} (value {value:e})")]
    PositivityLost { node: usize, value: f64 },

    #[error("step of size {dt:e} rejected: {reason}")]
    StepRejected { dt: f64, reason: String },

    #[error("requested time {requested} needs data beyond {available}")]
    RangeExceeded { requested: f64, available: f64 },

    #[error("tau must stay positive, got {0}")]
    NonPositiveTau(f64),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("tube fit unstable: {0}")]
    FitUnstable(String),

    #[error("no admissible radius found: {0}")]
    NotFound(String),

    #[error("degenerate annulus: {0}")]
    DegenerateAnnulus(String),

    #[error("gauge map folded at t = {t}, node {node}")]
    MonotonicityLost { t: f64, node: usize },

    #[error("misaligned inputs: {0}")]
    Alignment(String),

    #[error("at t = {t}: {source}")]
    AtTime { t: f64, source: Box<Error> },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Annotates the error with the flow time at which it occurred.
    pub fn at(self, t: f64) -> Error {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime { t, source: Box::new(e) },
        }
    }

    /// Strips any time annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
