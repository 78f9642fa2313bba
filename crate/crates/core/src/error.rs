use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line} is not valid UTF-8")]
    Encoding { path: PathBuf, line: usize },
    #[error("line count mismatch: {source_lines} source lines vs {target_lines} target lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: line {line} is empty")]
    EmptyLine { path: PathBuf, line: usize },
    #[error("invalid word {0:?}")]
    InvalidWord(String),
    #[error("truncation level {0} outside 0..=100")]
    TruncationLevel(u32),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("enumeration guard exceeded: {count} candidate strings > {limit}")]
    EnumerationGuard { count: u128, limit: u128 },
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("bridge: {0}")]
    Bridge(#[from] crate::bridge::BridgeError),
    #[error("cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable short name of the error class, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Encoding { .. } => "encoding",
            Error::Alignment { .. } => "alignment",
            Error::EmptyLine { .. } => "empty-line",
            Error::InvalidWord(_) => "invalid-word",
            Error::TruncationLevel(_) => "truncation-level",
            Error::EmptyCorpus => "empty-corpus",
            Error::TokenOutOfRange { .. } => "token-out-of-range",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Format { .. } => "format",
            Error::EnumerationGuard { .. } => "enumeration-guard",
            Error::Metric(_) => "metric",
            Error::Bridge(_) => "bridge",
            Error::Cell { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
