use std::path::PathBuf;

pub type Result<T, E = EbError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum EbError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("marginal probability of observation {x} is zero under the prior")]
    DegenerateSupport { x: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no prior mass at or below cutoff {cutoff}")]
    EmptySupport { cutoff: f64 },

    #[error("every candidate prior assigns zero likelihood to the data")]
    ZeroLikelihood,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed dataset file: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EbError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EbError::Io {
            path: path.into(),
            source,
        }
    }
}
