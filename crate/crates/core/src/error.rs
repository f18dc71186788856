use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("numerical instability: field `{field}` became {value} at t={time}h")]
    NumericalInstability {
        field: &'static str,
        value: f64,
        time: f64,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDivergence { epoch: usize, loss: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("predictor failed on day {day}: {source}")]
    Predictor {
        day: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short stable identifier used in the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Shape { .. } => "shape",
            Error::NumericalInstability { .. } => "numerical",
            Error::TrainingDivergence { .. } => "divergence",
            Error::Evaluation(_) => "evaluation",
            Error::Predictor { .. } => "predictor",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
