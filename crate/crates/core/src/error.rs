use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),

    #[error("invalid feature map: {0}")]
    InvalidFeatures(String),

    #[error("linear solve failed: {what} residual {residual:e}")]
    SingularSystem { what: &'static str, residual: f64 },

    #[error("matrix is too ill-conditioned to invert (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("non-finite reward at state {state}, action {action}")]
    NonFiniteReward { state: usize, action: usize },

    #[error("cannot sample from a distribution with total mass {total}")]
    DegenerateDistribution { total: f64 },

    #[error("transition floor {floor} exceeds 1/n_states = {max}")]
    InfeasibleFloor { floor: f64, max: f64 },

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no oracle snapshots in the second-half window")]
    EmptyWindow,

    #[error("rate fit needs strictly positive values, got {value} at T = {horizon}")]
    NonPositiveValue { horizon: f64, value: f64 },

    #[error("rate fit needs at least 3 distinct horizons, got {0}")]
    InsufficientPoints(usize),

    #[error("trace does not carry distribution-mismatch tracking")]
    MismatchNotTracked,

    #[error("inconsistent configurations in group `{0}`")]
    InconsistentGroup(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
