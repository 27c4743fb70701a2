use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid mask in {op}: every entry of a row is masked")]
    InvalidMask { op: &'static str },
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unknown token index {token} (vocabulary size {size})")]
    Vocabulary { token: usize, size: usize },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("program error: {0}")]
    Program(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("invalid config value for `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("checkpoint error in tensor `{tensor}`: {message}")]
    Checkpoint { tensor: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        LabError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable kind, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Dimension { .. } => "dimension",
            LabError::InvalidMask { .. } => "invalid-mask",
            LabError::Index { .. } => "index",
            LabError::Contract(_) => "contract",
            LabError::NonFinite(_) => "non-finite",
            LabError::Vocabulary { .. } => "vocabulary",
            LabError::Generation(_) => "generation",
            LabError::Program(_) => "program",
            LabError::Divergence { .. } => "divergence",
            LabError::Config { .. } => "validation",
            LabError::Checkpoint { .. } => "checkpoint",
            LabError::Format(_) => "format",
            LabError::Io { .. } => "io",
        }
    }
}
