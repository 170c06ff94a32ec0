use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("{matrix} did not converge after {sweeps} sweeps")]
    Convergence { matrix: String, sweeps: usize },

    /// A router-logit column with zero norm: the expert never responds to the
    /// router on the traced data.
    #[error("{}expert {expert} has a zero-norm logit column", .layer.map(|l| format!("layer {l}: ")).unwrap_or_default())]
    DegenerateColumn { layer: Option<usize>, expert: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    #[error("{0}")]
    Bounds(String),

    #[error("{0}")]
    Corruption(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("trace was harvested from model {trace} but model is {model}")]
    HashMismatch { trace: String, model: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parseable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Convergence { .. } => "convergence",
            Error::DegenerateColumn { .. } => "degenerate",
            Error::Io { .. } => "io",
            Error::Format(_) | Error::Json { .. } => "format",
            Error::Bounds(_) => "bounds",
            Error::Corruption(_) => "corruption",
            Error::Version { .. } => "version",
            Error::HashMismatch { .. } => "hash-mismatch",
        }
    }

    pub(crate) fn with_layer(self, layer: usize) -> Self {
        match self {
            Error::DegenerateColumn { expert, .. } => Error::DegenerateColumn {
                layer: Some(layer),
                expert,
            },
            other => other,
        }
    }
}
