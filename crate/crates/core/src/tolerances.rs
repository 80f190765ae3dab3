//! Named numerical constants used across the crate.
//!
//! Every tolerance that influences a pass/fail decision lives here or in
//! [`crate::decomposition::Tolerances`], so a reader can audit all of them
//! in one place.

/// Slack for set-membership tests `s ∈ Sgn(r)`; selections produced by the
/// ε-continuation sit inside the interval by construction, so this only
/// absorbs rounding.
pub const SGN_MEMBERSHIP_TOL: f64 = 1e-6;

/// A cell counts as flat when `|∂ₓθ| ≤ FLAT_GRAD_FACTOR / h_x`. On flat
/// cells any value in [−1, 1] is a valid selection; elsewhere the selection
/// must agree with the strict sign.
pub const FLAT_GRAD_FACTOR: f64 = 1e-8;

/// Armijo sufficient-decrease coefficient for the damped Newton line search.
pub const ARMIJO_SLOPE: f64 = 1e-4;

/// Backtracking factor for the damped Newton line search.
pub const ARMIJO_BACKTRACK: f64 = 0.5;

/// Maximum number of halvings in one line search before the step is taken
/// as-is; at that point the step is ~1e-18 of the Newton step and the
/// energy difference is below rounding anyway.
pub const MAX_BACKTRACKS: usize = 60;

/// Relative part of the dual-feasibility gate: the stored selection must
/// satisfy `|v·r − g| ≤ DUAL_FEASIBILITY_REL · r` up to the rounding floor
/// below.
pub const DUAL_FEASIBILITY_REL: f64 = 1e-11;

/// Absolute rounding floor of the dual slack, in units of
/// `ε_machine · (1 + |h|_∞) / h_x`: the slack `v·r − g` has `∂s/∂g ≈ −1`
/// on dead-zone cells, so it cannot be resolved below the grid resolution
/// of `g` itself, one ulp of θ divided by `h_x`.
pub const DUAL_FLOOR_ULPS: f64 = 8.0;

/// A cell's TV weight counts as numerically zero when
/// `α_i ≤ TV_INACTIVE_FACTOR · max α`. Such cells contribute nothing to the
/// energy or the Newton system through their dual, which is therefore set
/// pointwise to `f'_ε(∂ₓθ)` instead of being iterated.
pub const TV_INACTIVE_FACTOR: f64 = 1e-13;

/// The implicit flow stops early once `|θ^{k+1} − θ^k|_w` falls below this.
pub const FLOW_STEADY_TOL: f64 = 1e-12;
