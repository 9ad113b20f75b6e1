use std::path::{Path, PathBuf};

use uromt_core::solver::SequenceError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file that does not match its declared format; `field` names the offending entry.
    #[error("{}: `{field}`: {detail}", path.display())]
    Format { path: PathBuf, field: String, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Core(#[from] uromt_core::Error),
    #[error(transparent)]
    Sequence(#[from] Box<SequenceError>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, field: impl Into<String>, detail: impl Into<String>) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            field: field.into(),
            detail: detail.into(),
        }
    }
}
