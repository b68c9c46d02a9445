use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("unmapped device ids: {}", .0.join(", "))]
    UnmappedDevices(Vec<String>),

    #[error("site `{0}` is not in the site registry")]
    UnknownSite(String),

    #[error("normal matrix is not positive definite (condition estimate {condition:e})")]
    SingularFit { condition: f64 },

    #[error("variable `{variable}` has zero variance at site `{site}`")]
    DegenerateVariable { site: String, variable: String },

    #[error("no standardization entry for site `{site}`, variable `{variable}`")]
    MissingStandardizer { site: String, variable: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("series have no overlapping values")]
    EmptyOverlap,

    #[error("reference series has zero variance")]
    ZeroVariance,

    #[error("missing covariate `{0}` in sample")]
    MissingCovariate(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical kernel rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SingularFit { .. })
    }
}
