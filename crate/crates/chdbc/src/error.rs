use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChdbcError {
    /// Input to an inverse elliptic solve is not mean-zero.
    #[error("right-hand side has nonzero mean {mean:e} (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },

    /// An elliptic solve produced a residual above the acceptance threshold.
    #[error("elliptic solve residual {residual:e} exceeds {threshold:e}")]
    SolverFailure { residual: f64, threshold: f64 },

    /// A potential evaluation left the open interval (-1, 1).
    #[error("phase value {value} outside (-1, 1)")]
    DomainError { value: f64 },

    /// Newton iteration failed to reach the residual tolerance.
    #[error("Newton did not converge: residual {residual:e} after {iters} iterations")]
    NewtonDivergence { residual: f64, iters: usize },

    /// The positivity safeguard shrank the Newton step below 1e-12.
    /// The interior-minimizer theory guarantees this never happens for a
    /// correct assembly, so it signals a bug.
    #[error("positivity safeguard collapsed the Newton step (lambda = {lambda:e})")]
    PositivityLoss { lambda: f64 },

    /// A per-step structure check (mass, positivity margin, dissipation)
    /// failed after Newton reported convergence.
    #[error("structure violation at step {step}: {what}")]
    StructureViolation { step: usize, what: String },

    /// Configuration file / override parse problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChdbcError>;
