use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input `{path}`: run the `{stage}` stage first")]
    MissingStage { stage: &'static str, path: String },

    #[error("missing input file `{0}`")]
    MissingFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] alertlab::Error),

    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for bad or missing input, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}
