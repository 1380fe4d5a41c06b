use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("spectrum is not Hermitian-symmetric (max residual {residual:.3e})")]
    SymmetryViolation { residual: f64 },

    #[error("ring mask is empty for r_min={r_min}, r_max={r_max}")]
    EmptyMask { r_min: f64, r_max: f64 },

    #[error("scene constraint violated: {0}")]
    SceneConstraint(String),

    #[error("non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by
    /// the caller's input or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::SymmetryViolation { .. }
                | Error::Diverged { .. }
                | Error::Numerical(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
