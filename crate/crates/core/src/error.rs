use thiserror::Error;

/// Which half of the parameter vector an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Lambda,
    Eta,
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamKind::Lambda => write!(f, "lambda"),
            ParamKind::Eta => write!(f, "eta"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind}[{index}] = {value} is outside [0, 1]")]
    OutOfRange {
        kind: ParamKind,
        /// Index as used in the model: lambda_0..lambda_{L-1}, eta_1..eta_L.
        index: usize,
        value: f64,
    },
    #[error("expected {expected} lambda and eta entries, got {lambda} and {eta}")]
    WrongArity {
        expected: usize,
        lambda: usize,
        eta: usize,
    },
    #[error("invalid parameter vector: {0}")]
    InvalidTheta(Box<Error>),
    #[error("brute-force enumeration needs L <= {max}, got {got}")]
    LTooLarge { got: usize, max: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("requested {n} samples but the step function only covers {available}")]
    DomainExceeded { n: usize, available: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("no feasible segmentation")]
    NoFeasibleFit,
    #[error("no levels given")]
    Empty,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("trace too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("optimiser did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("every contingency table is too sparse for a chi-square test")]
    AllCellsSparse,
    #[error("state {0} has no interior visits")]
    NoVisits(usize),
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
