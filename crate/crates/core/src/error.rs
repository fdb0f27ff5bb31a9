use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(crate::validate::ValidationReport),

    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("i/o error: {0}")]
    Io(std::io::Error),

    #[error("csv error: {0}")]
    Csv(csv::Error),

    #[error("json error: {0}")]
    Json(serde_json::Error),

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },
}

macro_rules! wrap {
    ($($ty:ty => $variant:ident),* $(,)?) => {
        $(impl From<$ty> for Error {
            fn from(e: $ty) -> Self {
                Error::$variant(e)
            }
        })*
    };
}

wrap! {
    crate::validate::ValidationReport => Config,
    std::io::Error => Io,
    csv::Error => Csv,
    serde_json::Error => Json,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected,
                actual,
            })
        }
    }
}
