use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("price file has {0} distinct date(s); at least 2 are required")]
    InsufficientDates(usize),

    #[error("no liquid stocks")]
    NoLiquidStocks,

    #[error("index ticker `{0}` not found")]
    MissingIndex(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular conditioning: |{what}| = {value} is not below 1")]
    SingularConditioning { what: &'static str, value: f64 },

    #[error("{what} = {value} is outside [-1, 1]")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("decay fit failed: {0}")]
    FitFailure(String),

    #[error("no sector assigned to ticker `{0}`")]
    MissingSector(String),
}

impl Error {
    /// Stable machine-readable code for structured error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::InsufficientDates(_) => "insufficient_dates",
            Error::NoLiquidStocks => "no_liquid_stocks",
            Error::MissingIndex(_) => "missing_index",
            Error::Degenerate(_) => "degenerate_input",
            Error::SingularConditioning { .. } => "singular_conditioning",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InsufficientSample(_) => "insufficient_sample",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::UndefinedSimilarity(_) => "undefined_similarity",
            Error::FitFailure(_) => "fit_failure",
            Error::MissingSector(_) => "missing_sector",
        }
    }
}
