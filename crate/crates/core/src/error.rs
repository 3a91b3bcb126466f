use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing sidecar {0}")]
    MissingSidecar(PathBuf),

    #[error("malformed sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("nifti: {0}")]
    Nifti(String),

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch([usize; 3], [usize; 3]),

    #[error("mesh: {0}")]
    Mesh(String),

    #[error("catalog: {0}")]
    Catalog(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, shared by the CLI and the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io_error",
            Error::MissingSidecar(_) => "missing_sidecar",
            Error::Sidecar { .. } => "bad_sidecar",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::Nifti(_) => "nifti_unsupported",
            Error::Taxonomy(_) => "invalid_taxonomy",
            Error::Stats(_) => "stats_error",
            Error::DimensionMismatch(..) => "dimension_mismatch",
            Error::Mesh(_) => "mesh_error",
            Error::Catalog(_) => "catalog_error",
            Error::NotFound(_) => "not_found",
            Error::Conflict(_) => "conflict",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "invalid_config",
            Error::Json(_) => "json_error",
        }
    }
}
