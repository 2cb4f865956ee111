use thiserror::Error;

/// Coarse failure family, used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate piece id {0:?}")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("piece {piece:?} has no label from labeler {labeler:?}")]
    MissingLabel { piece: String, labeler: String },

    #[error("piece {piece:?} is missing required field `{field}`")]
    MissingField { piece: String, field: &'static str },

    #[error("degenerate research context: {0}")]
    DegenerateContext(String),

    #[error("enumeration budget exceeded: {pieces} pieces (limit {limit})")]
    EnumerationBudget { pieces: usize, limit: usize },

    #[error("conditioning event T = t has probability zero")]
    ZeroProbability,

    #[error("theta {theta:?} lies outside the admissible box")]
    ThetaOutsideDomain { theta: Vec<f64> },

    #[error("derivative bound is not finite on the supplied domain")]
    UnboundedDerivative,

    #[error("no supplied moment is sensitive on any sampled piece")]
    NoSensitiveMoment,

    #[error("{arm} arm has {got} observations, need at least {need}")]
    ArmTooSmall {
        arm: &'static str,
        got: usize,
        need: usize,
    },

    #[error(
        "rank-deficient design: smallest |R_jj| = {smallest:e} is below {tolerance:e} times the largest ({largest:e})"
    )]
    RankDeficient {
        smallest: f64,
        largest: f64,
        tolerance: f64,
    },

    #[error(
        "corrected Gram matrix is near-singular (condition number {condition:e} exceeds {threshold:e}); use a larger validation share"
    )]
    Singular { condition: f64, threshold: f64 },

    #[error("unsupported dimension: {0}; use bootstrap inference instead")]
    UnsupportedDimension(String),

    #[error("bootstrap unstable: {failures} of {replications} replicates failed")]
    BootstrapUnstable { failures: usize, replications: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::RankDeficient { .. }
            | Error::Singular { .. }
            | Error::UnboundedDerivative
            | Error::BootstrapUnstable { .. } => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
