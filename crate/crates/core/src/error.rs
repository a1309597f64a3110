use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}{}: {source}", row_suffix(*.row))]
    Io {
        path: PathBuf,
        row: Option<usize>,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: unknown token {token:?} for {field}")]
    Parse {
        row: usize,
        field: &'static str,
        token: String,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("statistics error: class {class} has {count} samples, at least 2 required")]
    Statistics { class: &'static str, count: usize },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported bundle version {found} (this build reads up to {supported})")]
    Version { found: u16, supported: u16 },
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" (manifest row {r})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            row: None,
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Manifest(_) => "manifest",
            Error::Decode { .. } => "decode",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Statistics { .. } => "statistics",
            Error::Selection(_) => "selection",
            Error::Training(_) => "training",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
        }
    }
}
