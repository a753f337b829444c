use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "collocation tube is empty: no candidate (of {candidates}) satisfied |phi| <= {eps}; \
         increase the tube half-width"
    )]
    EmptyTube { eps: f64, candidates: usize },

    #[error("error-indicator pool too small: need {needed} points, have {available} (short by {})", needed - available)]
    PoolTooSmall { needed: usize, available: usize },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("unknown case id `{id}`; valid ids: {}", valid.join(", "))]
    UnknownCase { id: String, valid: Vec<String> },

    #[error("schema mismatch: [{left}] vs [{right}]")]
    SchemaMismatch { left: String, right: String },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for failures of the numerical procedure itself, as opposed to bad
    /// input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::EmptyTube { .. }
                | Error::PoolTooSmall { .. }
                | Error::EmptyCloud
                | Error::NonConvergence(_)
        )
    }
}
