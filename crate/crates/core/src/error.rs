use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer} ({kind}): {msg}")]
    Layer {
        layer: usize,
        kind: &'static str,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("cannot canonize batch norm at layer {layer}: {msg}")]
    Canonize { layer: usize, msg: String },

    #[error("composite has no rule for parametrized layer {0}")]
    MissingRule(usize),

    #[error("non-finite relevance produced at layer {0}")]
    NonFiniteRelevance(usize),

    #[error("malformed input at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Layer { .. } => "layer",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::Canonize { .. } => "canonize",
            Error::MissingRule(_) => "missing_rule",
            Error::NonFiniteRelevance(_) => "non_finite_relevance",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) trait IoContext<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn io_context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: context(),
            source,
        })
    }
}
