//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Everything that can go wrong while building grids, evaluating the
/// functionals, or running the solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid construction rejected its arguments (non-finite half-width,
    /// nonpositive half-width, or fewer than two cells).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A field was handed to an operation expecting the other staggering
    /// (nodes vs. cell midpoints) or has the wrong length for the grid.
    #[error("field mismatch in {op}: {detail}")]
    FieldMismatch {
        /// Operation that rejected the field.
        op: &'static str,
        /// What was wrong.
        detail: String,
    },

    /// Coefficients violate admissibility: `α` must be nonnegative and `β`
    /// strictly positive everywhere on the domain.
    #[error("inadmissible coefficients: {0}")]
    Admissibility(String),

    /// A sampled or supplied value is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A scalar kernel was called outside its domain (negative ε, negative
    /// dead-zone width, nonpositive slope, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `f_ε'(y)` was requested at ε = 0, y = 0 where the derivative is the
    /// whole interval [−1, 1]; callers must use `sgn_interval` there.
    #[error("derivative is set-valued at eps = 0, y = 0; use sgn_interval")]
    SetValued,

    /// A sign selection `s` was passed that does not lie in `Sgn(r)`.
    #[error("invalid selection: s = {s} is not in Sgn({r})")]
    Selection {
        /// Argument of `Sgn`.
        r: f64,
        /// Offending selection.
        s: f64,
    },

    /// The exact oracle is restricted to very small grids.
    #[error("oracle supports n <= {max} cells, got n = {n}")]
    OracleTooLarge {
        /// Requested cell count.
        n: usize,
        /// Supported maximum.
        max: usize,
    },

    /// Newton failed to reach the requested residual within the iteration
    /// budget.
    #[error(
        "no convergence: residual {residual:.3e} above tolerance {tol:.3e} \
         after {iterations} iterations"
    )]
    NoConvergence {
        /// Weighted-norm residual at the last iterate.
        residual: f64,
        /// Absolute tolerance that was requested.
        tol: f64,
        /// Iterations spent.
        iterations: usize,
    },

    /// An ε-schedule or flow parameter is inconsistent (nonpositive ε,
    /// ratio outside (0, 1), eps0 < eps_min, nonpositive time step, ...).
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// A flow step's inner solve ended with a stall warning; the flow
    /// refuses to continue from an unconverged state.
    #[error("flow step did not converge: {0}")]
    FlowStepStalled(String),
}
