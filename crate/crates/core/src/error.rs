use std::path::PathBuf;

/// Every failure the pipeline can surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {0} is outside the id token range [1, 999]")]
    TokenRange(u64),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:.3e}, {converged}/{wanted} pairs converged)")]
    Eigen {
        iterations: usize,
        residual: f64,
        converged: usize,
        wanted: usize,
    },

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },

    #[error("cluster of {size} entries still exceeds the token range after {levels} levels; raise the level limit")]
    IndexOverflow { size: usize, levels: usize },

    #[error("clustering callback returned label {label}, expected a value in [1, {clusters}]")]
    ClusterLabel { label: usize, clusters: usize },

    #[error("duplicate id `{id}` shared by entities `{first}` and `{second}`")]
    DuplicateId {
        id: String,
        first: String,
        second: String,
    },

    #[error("id of `{shorter}` is a prefix of the id of `{longer}`")]
    PrefixConflict { shorter: String, longer: String },

    #[error("trie holds no items")]
    EmptyTrie,

    #[error("sequence of length {len} exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("artifact {} was produced by config {found}, current config is {expected}", .path.display())]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Short category tag used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Empty(_) | Error::Serde(_) => "parse",
            Error::Config(_) => "usage",
            Error::TokenRange(_)
            | Error::IndexOverflow { .. }
            | Error::ClusterLabel { .. }
            | Error::DuplicateId { .. }
            | Error::PrefixConflict { .. }
            | Error::EmptyTrie => "index",
            Error::Eigen { .. } | Error::NonFinite { .. } => "numeric",
            Error::SequenceTooLong { .. } | Error::Shape(_) => "model",
            Error::MissingArtifact(_) | Error::StaleArtifact { .. } => "artifact",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
