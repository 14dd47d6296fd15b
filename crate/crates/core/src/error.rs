use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value outside the domain of an operation, e.g. a zero-norm embedding.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    /// The Reject sampler ran out of attempts before reaching its target.
    #[error("reject sampler saturated: accepted {accepted} of {target} after {attempts} attempts")]
    Saturation {
        accepted: usize,
        target: usize,
        attempts: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a container file: {0}")]
    Format(String),

    #[error("unsupported container version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("invalid container header: {0}")]
    Header(String),

    #[error("corrupt container: {0}")]
    Corrupt(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
