use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("insufficient studies for heterogeneity (need at least 2, got {0})")]
    InsufficientStudies(usize),

    #[error("outcome never reported (outcome index {0})")]
    OutcomeNeverReported(usize),

    #[error("degenerate design (constant precision)")]
    ConstantPrecision,

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("rank test undefined: all variances equal")]
    EqualVariances,

    #[error("too few studies for test: need {needed}, got {got}")]
    TooFewStudies { needed: usize, got: usize },

    #[error("degenerate pooled proportion ({which} = {value})")]
    DegeneratePooledProportion { which: &'static str, value: f64 },

    #[error("zero cell in 2x2 table {index} without continuity correction")]
    ZeroCell { index: usize },

    #[error("invalid 2x2 table {index}: {reason}")]
    InvalidTable { index: usize, reason: String },

    #[error("singular information (constant precision) for outcome {0}")]
    SingularInformation(usize),

    #[error("sandwich bread singular")]
    SandwichSingular,

    #[error("invalid variance correction (lambda_bar = {0})")]
    InvalidVarianceCorrection(f64),

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositiveSemidefinite(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("selection retry cap exceeded: {survivors} of {needed} studies survived after {batches} batches")]
    SelectionRetryCap {
        survivors: usize,
        needed: usize,
        batches: usize,
    },

    #[error("bootstrap could not draw a usable resample after {0} attempts")]
    BootstrapRetryCap(usize),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{module} (outcome '{outcome}'): {source}")]
    InOutcome {
        module: &'static str,
        outcome: String,
        #[source]
        source: Box<MetaError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MetaError {
    pub(crate) fn in_outcome(self, module: &'static str, outcome: &str) -> MetaError {
        MetaError::InOutcome {
            module,
            outcome: outcome.to_string(),
            source: Box::new(self),
        }
    }

    /// True when the error stems from dataset validation rather than computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, MetaError::Validation(_) | MetaError::Parse { .. })
    }
}
