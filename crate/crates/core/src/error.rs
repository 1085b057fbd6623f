use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {value} lies outside the domain of the {basis} basis")]
    Domain { value: f64, basis: String },

    #[error("basis mismatch: expected {expected}, found {found}")]
    BasisMismatch { expected: String, found: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation {k} exceeds the rank {m} of the singular system")]
    TruncationExceedsRank { k: usize, m: usize },

    #[error("source condition violated at component {component}")]
    SourceConditionViolated { component: usize },

    #[error("degenerate empirical design")]
    DegenerateDesign,

    #[error("rank-deficient design; increase ridge")]
    RankDeficient,

    #[error(
        "non-convex empirical objective; increase λ or sieve ridge \
         (min eigenvalue {min_eigenvalue:e}, floor {floor:e})"
    )]
    NonConvex { min_eigenvalue: f64, floor: f64 },

    #[error("optimality certificate failed: gradient norm {gradient_norm:e} above tolerance {tolerance:e}")]
    NotOptimal { gradient_norm: f64, tolerance: f64 },

    #[error("rejection sampler acceptance rate {rate:.4} below 1%; misconfigured singular values")]
    LowAcceptance { rate: f64 },

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("fold `{0}` is empty")]
    EmptyFold(&'static str),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("α-condition not satisfied on tested grid")]
    AlphaInfeasible,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("dataset has no role map attached")]
    MissingRoles,

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e.to_string()),
        }
    }
}

impl Error {
    /// Numerical failures (as opposed to configuration or I/O problems).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvex { .. }
                | Error::NotOptimal { .. }
                | Error::DegenerateDesign
                | Error::RankDeficient
                | Error::SourceConditionViolated { .. }
                | Error::LowAcceptance { .. }
                | Error::Identification(_)
                | Error::Consistency(_)
                | Error::AlphaInfeasible
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
