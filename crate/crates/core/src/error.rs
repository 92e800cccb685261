use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parameter error for `{key}`: {detail}")]
    Param { key: String, detail: String },

    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("tie error: {0}")]
    Tie(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { field, detail: detail.into() }
    }

    pub(crate) fn param(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Param { key: key.into(), detail: detail.into() }
    }
}
