use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("entity id {0} out of bounds")]
    EntityOutOfBounds(u32),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty candidate relation set")]
    EmptyCandidates,

    #[error("non-finite gradient in {0}")]
    NonFinite(&'static str),

    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("enumeration guard exceeded: length {0} > {1}")]
    Guard(usize, usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
