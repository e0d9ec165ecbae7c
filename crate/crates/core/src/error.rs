use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up. `axes` names the offending dimensions.
    #[error("dimension error in {op}: {axes}")]
    Dimension { op: &'static str, axes: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate statistics in {op}: {detail}")]
    DegenerateStatistics { op: &'static str, detail: String },

    #[error("degenerate cluster {cluster}: total soft-assignment mass is zero")]
    DegenerateCluster { cluster: usize },

    #[error("KL divergence is infinite: q[{row}][{col}] = 0 where p > 0")]
    InfiniteDivergence { row: usize, col: usize },

    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axes: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axes: axes.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Usage(_) => "usage",
            Error::DegenerateStatistics { .. } => "degenerate_statistics",
            Error::DegenerateCluster { .. } => "degenerate_cluster",
            Error::InfiniteDivergence { .. } => "infinite_divergence",
            Error::Diverged { .. } => "diverged",
            Error::Format(_) => "format",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Wav(_) => "wav",
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::File {
            path: path.into(),
            source,
        })
    }
}
