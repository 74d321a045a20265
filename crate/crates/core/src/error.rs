use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unsupported difficulty {0}: expected 2, 3, or 4")]
    UnsupportedDifficulty(usize),

    #[error("unknown token id {id} for vocabulary of size {vocab_size}")]
    UnknownToken { id: usize, vocab_size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "vocab hash mismatch: checkpoint was written for {found}, current vocabulary is {expected}"
    )]
    VocabHashMismatch { found: String, expected: String },

    #[error("non-finite {quantity} encountered during {stage}")]
    NonFinite {
        quantity: &'static str,
        stage: &'static str,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),

    #[error("malformed metrics CSV at row {row}: {message}")]
    BadMetricsRow { row: usize, message: String },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    Toml(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        CoreError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
