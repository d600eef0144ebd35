use thiserror::Error;

/// Errors surfaced by the library and mapped to process exit codes by the CLI.
#[derive(Debug, Error)]
pub enum StabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("degenerate measure: particle count must be at least 1")]
    DegenerateMeasure,

    #[error("empty transport plan")]
    EmptyPlan,

    #[error("transport plan is not a permutation pairing")]
    NonPermutationPlan,

    #[error("marginal mismatch: {0}")]
    MarginalMismatch(String),

    #[error("empty control set")]
    EmptyControlSet,

    #[error("unsupported control-Lyapunov pair: {0}")]
    UnsupportedClp(String),

    #[error("no samples available for modulus estimation")]
    NoSamples,

    #[error("bisection failed to bracket: {0}")]
    BisectionFailure(String),

    #[error("parameter ordering violated: {0}")]
    ParameterOrdering(String),

    #[error("infeasible parameters: last failing condition `{last_failed}` at kappa={kappa:.3e}, eps={eps:.3e}")]
    InfeasibleParameters {
        last_failed: String,
        kappa: f64,
        eps: f64,
    },

    #[error("inf-convolution did not converge after {iterations} iterations (eps={eps:.3e}, best value {best_value:.6e})")]
    NonConvergence {
        iterations: usize,
        eps: f64,
        best_value: f64,
    },

    #[error("vector field produced non-finite output at particle {particle}")]
    FieldEvaluation { particle: usize },

    #[error("trajectory blew up: state non-finite at t={t}")]
    BlowUp { t: f64 },

    #[error("measure is outside the outermost shell (w2={w2:.6}); rebuild the table with a larger upper index")]
    OutOfShellRange { w2: f64 },

    #[error("infeasible partition bounds: {0}")]
    InfeasiblePartition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transportation instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("missing trajectory records: {0}")]
    MissingRecords(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StabError>;

impl StabError {
    /// Exit code used by the CLI: 3 for configuration problems, 4 for
    /// numerical non-convergence, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            StabError::Config(_) | StabError::Io(_) | StabError::InfeasiblePartition(_) => 3,
            StabError::NonConvergence { .. }
            | StabError::BlowUp { .. }
            | StabError::BisectionFailure(_)
            | StabError::InfeasibleParameters { .. } => 4,
            _ => 2,
        }
    }
}
