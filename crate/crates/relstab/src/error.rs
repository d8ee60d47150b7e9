use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("CSV header is missing schema column {0:?}")]
    MissingColumn(String),

    #[error("column {column:?}, data row {row}: binary column holds {value:?}, expected 0 or 1")]
    NonBinaryValue {
        column: String,
        row: usize,
        value: String,
    },

    #[error("column {column:?}, data row {row}: cannot parse {value:?} as a number")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },

    #[error("schema must declare exactly one label column, found {0}")]
    BadLabelCount(usize),

    #[error("cannot split {n} rows into non-empty parts with ratios {ratios:?}")]
    SplitTooSmall { n: usize, ratios: (f64, f64, f64) },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("model file is inconsistent: {0}")]
    BadModelShapes(String),

    #[error("weighted least-squares system is singular")]
    SingularSystem,

    #[error("sampled only {got} distinct coalitions, need at least {need}")]
    TooFewCoalitions { got: usize, need: usize },

    #[error("neighborhood row {row} does not share the anchor's predicted label")]
    LabelInconsistentNeighborhood { row: usize },

    #[error(
        "rejection sampling exhausted {attempts} attempts with {accepted_so_far} of {requested} accepted"
    )]
    AcceptanceExhausted {
        accepted_so_far: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    PowerIterationDiverged { iterations: usize, residual: f64 },

    #[error("validation accuracy {achieved:.4} below required {required:.4}")]
    TrainingBelowThreshold { required: f64, achieved: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error, unwrapping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
