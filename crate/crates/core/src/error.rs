use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("XML structure error at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("invalid JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("document {doc_id} has age {age_days} days, outside the window [0, {window_days}]")]
    AgeOutsideWindow {
        doc_id: String,
        age_days: i64,
        window_days: u32,
    },

    #[error("vital articles need {vital_tokens} tokens but the budget is {budget}; raise the wiki budget")]
    VitalOverBudget { vital_tokens: u64, budget: u64 },

    #[error("vital article {0} is not in the pool")]
    VitalNotInPool(String),

    #[error("tokenizer mismatch: expected {expected}, found {found}")]
    TokenizerMismatch { expected: String, found: String },

    #[error("invalid tokenizer spec: {0}")]
    Tokenizer(String),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
