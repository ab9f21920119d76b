use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Variants are grouped loosely by origin: expression handling, structural
/// preconditions, numeric failures of the solvers, and I/O at the edges.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("domain error in `{subexpr}`: {message}")]
    Domain { subexpr: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("compatibility violation: |xdot - rho*e| = {residual:e} exceeds {tol:e}")]
    CompatibilityViolation { residual: f64, tol: f64 },

    #[error("base mismatch between tangent points: residual {0:e}")]
    BaseMismatch(f64),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("curve is not admissible: residual {0:e}")]
    NotAdmissible(f64),

    #[error("singular Lagrangian at t = {t}: condition estimate {cond:e}")]
    SingularLagrangian { t: f64, cond: f64 },

    #[error("singular saddle system at t = {t}: condition estimate {cond:e}")]
    SingularSaddle { t: f64, cond: f64 },

    #[error("singular reduced Hessian at t = {t}: condition estimate {cond:e}")]
    SingularReducedHessian { t: f64, cond: f64 },

    #[error("constraint drift at t = {t}: |phi| = {residual:e}")]
    ConstraintDrift { t: f64, residual: f64 },

    #[error("non-finite state at t = {0}")]
    NonFiniteState(f64),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("constraint Jacobian is rank deficient (rank {rank} < {expected})")]
    RankDeficientConstraint { rank: usize, expected: usize },

    #[error("algebroid is not quasi-Lie (skew residual {skew:e}, rho-sigma residual {rho_sigma:e})")]
    NotQuasiLie { skew: f64, rho_sigma: f64 },

    #[error("degenerate frame: {0}")]
    FrameDegenerate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("at sample point {point:?}: {source}")]
    AtPoint {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach the sample point at which an evaluation failed.
    pub fn at_point(self, point: &[f64]) -> Self {
        Error::AtPoint { point: point.to_vec(), source: Box::new(self) }
    }

    /// Attach the integration time at which a failure occurred, unless the
    /// error already carries one.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            e @ (Error::SingularLagrangian { .. }
            | Error::SingularSaddle { .. }
            | Error::SingularReducedHessian { .. }
            | Error::ConstraintDrift { .. }
            | Error::NonFiniteState(_)
            | Error::AtTime { .. }) => e,
            e => Error::AtTime { t, source: Box::new(e) },
        }
    }

    /// Strip [`Error::AtPoint`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } | Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures that come from the numerics (singularity, drift,
    /// divergence) rather than from malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::Domain { .. }
                | Error::SingularLagrangian { .. }
                | Error::SingularSaddle { .. }
                | Error::SingularReducedHessian { .. }
                | Error::ConstraintDrift { .. }
                | Error::NonFiniteState(_)
                | Error::NoConvergence { .. }
                | Error::RankDeficientConstraint { .. }
                | Error::CompatibilityViolation { .. }
                | Error::NotAdmissible(_)
                | Error::FrameDegenerate(_)
                | Error::NotQuasiLie { .. }
        )
    }
}
