use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("step {step} out of range (valid: {valid})")]
    StepOutOfRange { step: usize, valid: String },

    #[error("no policy row for step {0}")]
    MissingPolicyRow(usize),

    #[error("observation {obs} is not valid at step {step} ({count} observations)")]
    InvalidObservation { step: usize, obs: usize, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero propensity recorded for sample {0}")]
    ZeroPropensity(usize),

    #[error("propensity mismatch at sample {index}: recorded {recorded}, policy gives {current}")]
    PropensityMismatch {
        index: usize,
        recorded: f64,
        current: f64,
    },

    #[error("kernel is not positive semidefinite on the sample set (quadratic form {0})")]
    KernelNotPsd(f64),

    #[error("infeasible witness values: {0}")]
    InfeasibleWitness(String),

    #[error("coincident points {0} and {1} were not aggregated before building the LP")]
    CoincidentPoints(usize, usize),

    #[error("LP dimension cap exceeded: {0}")]
    DimensionCap(String),

    #[error("LP numerical failure: {0}")]
    Numerical(String),

    #[error("LP oracle returned status {0}")]
    LpStatus(String),

    #[error("missing abstraction map")]
    MissingAbstraction,

    #[error("leaf costs must have a unique minimizer")]
    NonUniqueMinimizer,

    #[error("could not satisfy Lipschitz constraints after {0} attempts")]
    LipschitzConstruction(usize),

    #[error("insufficient demonstrations at step {step}: need {needed}, have {have}")]
    InsufficientDemos {
        step: usize,
        needed: usize,
        have: usize,
    },

    #[error("expert observation at step {0} matches no child")]
    NoMatchingChild(usize),

    #[error("function class cap exceeded: {size} > {cap}")]
    ClassCap { size: usize, cap: usize },

    #[error("game failed at iteration {iteration}: {source}")]
    Game {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
