//! Scalar kernels of the regularized total-variation energy and the
//! discrete energy itself.
//!
//! The smoothing family is `f_ε(y) = √(ε² + y²)`, which decreases to `|y|`
//! as ε ↓ 0 with `0 ≤ f_ε(y) − |y| ≤ ε`, and has derivative
//! `f_ε'(y) = y/√(ε² + y²) ∈ (−1, 1)`. At ε = 0 the derivative at the
//! origin is the whole interval `Sgn(0) = [−1, 1]`, which is why
//! [`f_eps_prime`] refuses that point and set-valued questions go through
//! [`sgn_interval`].
//!
//! The dead-zone pair is
//!
//! ```text
//! ρ_{(a,b)}(r)  = a·Sgn(r) + b·r,
//! ρ*_{(a,b)}(r) = ([r − a]⁺ − [r + a]⁻)/b,
//! ```
//!
//! mutually inverse monotone maps for `a ≥ 0`, `b > 0`; `ρ*` is the
//! soft-threshold with dead zone `[−a, a]` and is `1/b`-Lipschitz. The
//! discrete energy on a staggered grid evaluates
//! `Σ α_i f_ε((Dθ)_i) h_x + ½ Σ β_i (Dθ)_i² h_x`.

use serde::Serialize;

use crate::grid::{expect_nodal, CoefficientPair, Grid, GridFunction};
use crate::tolerances::SGN_MEMBERSHIP_TOL;
use crate::{Error, Result};

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "eps must be finite and nonnegative, got {eps}"
        )));
    }
    Ok(())
}

fn check_dead_zone(a: f64, b: f64) -> Result<()> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dead-zone width a must be finite and nonnegative, got {a}"
        )));
    }
    if !b.is_finite() || b <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "slope b must be finite and positive, got {b}"
        )));
    }
    Ok(())
}

/// `f_ε(y) = √(ε² + y²)`; at ε = 0 this is `|y|`.
pub fn f_eps(eps: f64, y: f64) -> Result<f64> {
    check_eps(eps)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("f_eps argument".into()));
    }
    Ok(y.hypot(eps))
}

/// `f_ε'(y) = y/√(ε² + y²)`, always in [−1, 1].
///
/// Errors at ε = 0, y = 0, where the derivative is the set `[−1, 1]`.
pub fn f_eps_prime(eps: f64, y: f64) -> Result<f64> {
    check_eps(eps)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("f_eps_prime argument".into()));
    }
    if eps == 0.0 && y == 0.0 {
        return Err(Error::SetValued);
    }
    Ok(y / y.hypot(eps))
}

/// `f_ε''(y) = ε²/(ε² + y²)^{3/2}`, the curvature used by the Newton
/// Jacobian. Evaluated as `(ε/r)²/r` with `r = √(ε² + y²)` to stay finite
/// for extreme arguments. Requires ε > 0.
pub fn f_eps_second(eps: f64, y: f64) -> Result<f64> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Err(Error::InvalidArgument(
            "f_eps_second needs eps > 0 (the limit is a point mass)".into(),
        ));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("f_eps_second argument".into()));
    }
    let r = y.hypot(eps);
    let t = eps / r;
    Ok(t * t / r)
}

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    /// Lower endpoint.
    pub lo: f64,
    /// Upper endpoint.
    pub hi: f64,
}

impl Interval {
    /// Membership test widened by `tol` on both sides.
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    /// Distance from `x` to the interval (zero inside).
    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// The set-valued sign: `{1}` for y > 0, `{−1}` for y < 0, `[−1, 1]` at 0.
pub fn sgn_interval(y: f64) -> Interval {
    if y > 0.0 {
        Interval { lo: 1.0, hi: 1.0 }
    } else if y < 0.0 {
        Interval { lo: -1.0, hi: -1.0 }
    } else {
        Interval { lo: -1.0, hi: 1.0 }
    }
}

/// Soft threshold `ρ*_{(a,b)}(r) = ([r − a]⁺ − [r + a]⁻)/b`: zero on the
/// dead zone `|r| ≤ a`, affine with slope `1/b` outside.
pub fn soft_threshold(a: f64, b: f64, r: f64) -> Result<f64> {
    check_dead_zone(a, b)?;
    if !r.is_finite() {
        return Err(Error::NonFinite("soft_threshold argument".into()));
    }
    Ok(((r - a).max(0.0) + (r + a).min(0.0)) / b)
}

/// `ρ_{(a,b)}(r) = a·s + b·r` for a selection `s ∈ Sgn(r)`.
///
/// Errors when `s` lies outside `Sgn(r)` (beyond a small rounding slack).
pub fn rho_apply(a: f64, b: f64, r: f64, s: f64) -> Result<f64> {
    check_dead_zone(a, b)?;
    if !r.is_finite() || !s.is_finite() {
        return Err(Error::NonFinite("rho_apply argument".into()));
    }
    if !sgn_interval(r).contains(s, SGN_MEMBERSHIP_TOL) {
        return Err(Error::Selection { r, s });
    }
    Ok(a * s + b * r)
}

/// Values of the split energy at one state.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBreakdown {
    /// Smoothing parameter the total-variation part was evaluated with.
    pub eps: f64,
    /// `Σ α_i f_ε((Dθ)_i) h_x`.
    pub v_alpha: f64,
    /// `½ Σ β_i (Dθ)_i² h_x`.
    pub w_beta: f64,
    /// `v_alpha + w_beta`.
    pub total: f64,
}

/// Evaluates the (possibly ε-smoothed) energy of a nodal state.
pub fn eval_energy(
    eps: f64,
    theta: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
) -> Result<EnergyBreakdown> {
    check_eps(eps)?;
    let t = expect_nodal(theta, grid, "eval_energy")?;
    let alpha = c.alpha_cells.values();
    let beta = c.beta_cells.values();
    let h = grid.h_x;
    let mut v_alpha = 0.0;
    let mut w_beta = 0.0;
    for i in 0..grid.n {
        let g = (t[i + 1] - t[i]) / h;
        if !g.is_finite() {
            return Err(Error::NonFinite("eval_energy state".into()));
        }
        v_alpha += alpha[i] * g.hypot(eps) * h;
        w_beta += 0.5 * beta[i] * g * g * h;
    }
    Ok(EnergyBreakdown {
        eps,
        v_alpha,
        w_beta,
        total: v_alpha + w_beta,
    })
}
