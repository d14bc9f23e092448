use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: row {row}, column '{column}': {message}", path.display())]
    Row {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("config {}: {message}", path.display())]
    ConfigSyntax { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] smartsize_core::Error),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
