use std::path::PathBuf;

use crate::data::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A required column is missing or a column mapping is inconsistent.
    #[error("schema error: {0}")]
    Schema(String),

    /// One or more hard invariants of a dataset were violated.
    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    /// CATE draws do not line up with the observations they describe.
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data is well-formed but unusable for the requested computation.
    #[error("data error: {0}")]
    Data(String),

    /// A synthetic population or simulation design specification is invalid.
    #[error("spec error: {0}")]
    Spec(String),

    /// Design-based variance cannot be computed for the given design.
    #[error("design error: {0}")]
    Design(String),

    #[error("perfect separation{}", .covariate.as_ref().map(|c| format!(" on covariate `{c}`")).unwrap_or_default())]
    Separation { covariate: Option<String> },

    #[error("did not converge: {0}")]
    Convergence(String),

    /// Too many replications of a simulation study failed.
    #[error("simulation aborted: {failed} of {replications} replications failed; first failure: {first}")]
    ReplicationFailures {
        failed: usize,
        replications: usize,
        first: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
