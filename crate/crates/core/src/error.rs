use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("action {action} out of range for {env} ({count} actions)")]
    InvalidAction {
        env: String,
        action: usize,
        count: usize,
    },

    #[error("step called on {0} after the episode ended; call reset first")]
    EpisodeOver(String),

    #[error("insufficient samples: buffer holds {have}, batch needs {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("malformed checkpoint at byte offset {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("collection worker for instance {instance} failed: {reason}")]
    Worker { instance: usize, reason: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
