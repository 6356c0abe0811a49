use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed JSON; `offset` is the byte offset into the document.
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    /// A required field is absent from a structured document.
    #[error("missing required field `{field}`")]
    Structure { field: String },

    /// A JSONL record failed to parse or validate (1-based line number).
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("malformed XML at {position}: {message}")]
    Xml { position: String, message: String },

    /// CSV cell or row problem; `row` is 1-based and counts the header.
    #[error("CSV row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("alerts from more than one tool: `{expected}` and `{found}`")]
    MixedTools { expected: String, found: String },

    #[error("training set has no examples labeled {missing}")]
    SingleLabel { missing: &'static str },

    #[error("non-finite value for feature `{feature}`")]
    NonFinite { feature: String },

    #[error("feature schema mismatch (missing: [{}], extra: [{}])", missing.join(", "), extra.join(", "))]
    SchemaMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("operation not supported for model kind `{0}`")]
    UnsupportedKind(String),

    #[error("model schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("sweep configuration {config} failed: {source}")]
    Sweep {
        config: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Converts a `serde_json` error into [`Error::Json`] with a byte offset into `doc`.
    pub(crate) fn from_json(doc: &str, err: &serde_json::Error) -> Self {
        Error::Json {
            offset: byte_offset(doc, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(doc: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in doc.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(doc.len());
        }
        offset += l.len();
    }
    doc.len()
}
