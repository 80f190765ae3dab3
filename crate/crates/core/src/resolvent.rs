//! Resolvent solves of the regularized energy by ε-continuation.
//!
//! For fixed ε > 0 the objective
//!
//! ```text
//! E_ε(θ) = Σ_i α_i f_ε((Dθ)_i) h_x + ½ Σ_i β_i (Dθ)_i² h_x + ½ |θ − h|²_w
//! ```
//!
//! is smooth and 1-strongly convex in the weighted inner product; its
//! gradient is `R(θ) = A(α f_ε'(Dθ) + β Dθ) + θ − h` and its Hessian is the
//! tridiagonal, symmetric-positive-definite (w.r.t. `⟨·,·⟩_w`) operator
//! `J = A ∘ diag(α f_ε''(Dθ) + β) ∘ D + I`. Each ε is solved by damped
//! Newton with Armijo backtracking; ε then decreases geometrically with warm
//! starts until `eps_min`, where the sign selection `ϖ = f_ε'(Dθ)` and the
//! flux `θ̃ = α ϖ + β Dθ` are extracted.

use serde::Serialize;

use crate::functionals::f_eps_second;
use crate::grid::{expect_nodal, CoefficientPair, Grid, GridFunction};
use crate::tolerances::{
    ARMIJO_BACKTRACK, ARMIJO_SLOPE, DUAL_FEASIBILITY_REL, DUAL_FLOOR_ULPS, MAX_BACKTRACKS,
    TV_INACTIVE_FACTOR,
};
use crate::{Error, Result};

/// Geometric ε-continuation schedule plus the Newton stopping parameters.
#[derive(Debug, Clone, Serialize)]
pub struct EpsSchedule {
    /// First (largest) smoothing parameter.
    pub eps0: f64,
    /// Geometric decay factor in (0, 1).
    pub ratio: f64,
    /// Terminal smoothing parameter (> 0).
    pub eps_min: f64,
    /// Relative Newton tolerance: stop once `|R|_w ≤ newton_tol·(1 + |h|_w)`.
    pub newton_tol: f64,
    /// Newton iteration budget per ε.
    pub max_newton: usize,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule {
            eps0: 1.0,
            ratio: 0.25,
            eps_min: 1e-8,
            newton_tol: 1e-10,
            max_newton: 100,
        }
    }
}

impl EpsSchedule {
    /// Checks the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if !self.eps0.is_finite() || self.eps0 <= 0.0 {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !self.eps_min.is_finite() || self.eps_min <= 0.0 {
            return bad(format!("eps_min must be positive, got {}", self.eps_min));
        }
        if self.eps_min > self.eps0 {
            return bad(format!(
                "eps_min = {} must not exceed eps0 = {}",
                self.eps_min, self.eps0
            ));
        }
        if !self.ratio.is_finite() || self.ratio <= 0.0 || self.ratio >= 1.0 {
            return bad(format!("ratio must lie in (0, 1), got {}", self.ratio));
        }
        if !self.newton_tol.is_finite() || self.newton_tol <= 0.0 {
            return bad(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.max_newton == 0 {
            return bad("max_newton must be at least 1".into());
        }
        Ok(())
    }

    /// The decreasing ε values the continuation visits; the first is `eps0`
    /// and the last is exactly `eps_min`.
    pub fn eps_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut e = self.eps0;
        loop {
            out.push(e);
            if e <= self.eps_min {
                break;
            }
            e = (e * self.ratio).max(self.eps_min);
        }
        out
    }
}

/// Per-ε record of the continuation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsTraceEntry {
    /// Smoothing parameter of this stage.
    pub eps: f64,
    /// `Φ_ε(θ^ε)` (without the fidelity term).
    pub energy: f64,
    /// `|θ^ε − θ^prev|_w`; for the first entry, distance from the warm
    /// start `h`.
    pub increment: f64,
    /// `½|θ^ε|²_w + Σ β_i (Dθ^ε)_i² h_x`, the left side of the stability
    /// bound whose right side is `½|h|²_w`.
    pub apriori_lhs: f64,
}

/// Output of [`solve_resolvent`].
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    /// The minimizer θ of `Φ(·) + ½|· − h|²_w` (nodal).
    pub theta: GridFunction,
    /// Sign selection `ϖ_i = f_ε'((Dθ)_i)` at the final ε, clamped to [−1, 1].
    pub varpi: GridFunction,
    /// Flux `θ̃_i = α_i ϖ_i + β_i (Dθ)_i` (cells).
    pub flux: GridFunction,
    /// `θ* = h − θ` (nodal), the subgradient the resolvent certifies.
    pub theta_star: GridFunction,
    /// Final smoothing parameter (the schedule's `eps_min`).
    pub final_eps: f64,
    /// One record per continuation stage.
    pub eps_trace: Vec<EpsTraceEntry>,
    /// Set when some stage exhausted its Newton budget; the solve still
    /// returns its best iterate.
    pub warning: Option<String>,
}

/// Gradient of the ε-smoothed objective in the weighted inner product:
/// `R(θ) = A(α f_ε'(Dθ) + β Dθ) + θ − h`. Needs ε > 0.
pub fn energy_gradient(
    eps: f64,
    theta: &GridFunction,
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
) -> Result<GridFunction> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "energy_gradient needs eps > 0, got {eps}"
        )));
    }
    let t = expect_nodal(theta, grid, "energy_gradient")?;
    let hv = expect_nodal(h, grid, "energy_gradient")?;
    let mut r = vec![0.0; grid.n + 1];
    residual_into(
        eps,
        t,
        hv,
        c.alpha_cells.values(),
        c.beta_cells.values(),
        grid,
        &mut r,
    );
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy_gradient result".into()));
    }
    Ok(GridFunction::nodal(r))
}

/// Writes `A(α f_ε'(Dθ) + β Dθ) + θ − h` into `out`.
fn residual_into(
    eps: f64,
    theta: &[f64],
    h: &[f64],
    alpha: &[f64],
    beta: &[f64],
    grid: &Grid,
    out: &mut [f64],
) {
    let n = grid.n;
    let hx = grid.h_x;
    // Flux per cell, then its negative divergence plus the fidelity part.
    let mut prev_q = 0.0; // ghost flux left of the domain
    for j in 0..=n {
        let q = if j < n {
            let g = (theta[j + 1] - theta[j]) / hx;
            alpha[j] * (g / g.hypot(eps)) + beta[j] * g
        } else {
            0.0 // ghost flux right of the domain
        };
        out[j] = (prev_q - q) / grid.node_weights[j] + theta[j] - h[j];
        prev_q = q;
    }
}

/// `E_ε(θ) = Φ_ε(θ) + ½|θ − h|²_w`, kept for the gradient consistency test.
#[cfg(test)]
fn energy_value(eps: f64, theta: &[f64], h: &[f64], alpha: &[f64], beta: &[f64], grid: &Grid) -> f64 {
    let n = grid.n;
    let hx = grid.h_x;
    let mut e = 0.0;
    for i in 0..n {
        let g = (theta[i + 1] - theta[i]) / hx;
        e += alpha[i] * g.hypot(eps) * hx + 0.5 * beta[i] * g * g * hx;
    }
    for j in 0..=n {
        let d = theta[j] - h[j];
        e += 0.5 * d * d * grid.node_weights[j];
    }
    e
}

/// Solves the tridiagonal system with the Thomas algorithm. The Newton
/// matrix is strictly diagonally dominant (unit diagonal excess), so no
/// pivoting is needed.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for k in 1..m {
        let denom = diag[k] - sub[k] * c[k - 1];
        c[k] = if k < m - 1 { sup[k] / denom } else { 0.0 };
        d[k] = (rhs[k] - sub[k] * d[k - 1]) / denom;
    }
    let mut x = d;
    for k in (0..m - 1).rev() {
        x[k] -= c[k] * x[k + 1];
    }
    x
}

/// Writes `A(α v + β Dθ) + θ − h` into `out`, the Euler–Lagrange residual
/// with the dual cell variable `v` standing in for `f_ε'(Dθ)`.
fn residual_pd_into(
    theta: &[f64],
    dual: &[f64],
    h: &[f64],
    alpha: &[f64],
    beta: &[f64],
    grid: &Grid,
    out: &mut [f64],
) {
    let n = grid.n;
    let hx = grid.h_x;
    let mut prev_q = 0.0; // ghost flux left of the domain
    for j in 0..=n {
        let q = if j < n {
            let g = (theta[j + 1] - theta[j]) / hx;
            alpha[j] * dual[j] + beta[j] * g
        } else {
            0.0 // ghost flux right of the domain
        };
        out[j] = (prev_q - q) / grid.node_weights[j] + theta[j] - h[j];
        prev_q = q;
    }
}

pub(crate) struct NewtonOutcome {
    pub(crate) theta: Vec<f64>,
    /// Converged dual cell variable `v ≈ f_ε'(Dθ)`, clamped to `[-1, 1]`.
    pub(crate) dual: Vec<f64>,
    pub(crate) residual: f64,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
}

/// Damped primal-dual Newton for the coupled system
///
/// ```text
///   A(α v + β Dθ) + θ − h = 0,      v_i · hypot((Dθ)_i, ε) = (Dθ)_i,
/// ```
///
/// stopping at `|R|_w ≤ tol_abs` once the dual constraint holds to
/// rounding. Two reasons not to run plain Newton on `E_ε` directly:
///
/// * A primal step linearizes `f_ε'` and chases the ε-wide quadratic zone
///   of each kink, so damped steps shrink geometrically and the iteration
///   stalls once ε is small. The dual linearization stays well-behaved
///   uniformly in ε.
/// * On cells deep in the dead zone, `f_ε'(Dθ)` moves by
///   `~ ulp(θ)/(ε h_x)` under a one-ulp change of θ, so the residual
///   evaluated through `f_ε'` has a rounding floor far above any useful
///   tolerance. The residual through the *stored* dual `v` has no such
///   amplification, which is what makes the stopping criterion attainable
///   at all in double precision.
///
/// With `|v| ≤ 1` the modified cell curvature `α(1 − v·g/r)/r + β` stays
/// positive, so the matrix keeps its unit diagonal excess and the Thomas
/// solve needs no pivoting. At the first iterate `v = f_ε'(g)` exactly,
/// where this curvature coincides with the true second derivative
/// `α ε²/r³ + β`.
pub(crate) fn newton(
    eps: f64,
    init: Vec<f64>,
    h: &[f64],
    alpha: &[f64],
    beta: &[f64],
    grid: &Grid,
    tol_abs: f64,
    max_iter: usize,
) -> NewtonOutcome {
    let n = grid.n;
    let hx = grid.h_x;
    let mut theta = init;
    let mut dual: Vec<f64> = (0..n)
        .map(|i| {
            let g = (theta[i + 1] - theta[i]) / hx;
            (g / g.hypot(eps)).clamp(-1.0, 1.0)
        })
        .collect();
    let mut r = vec![0.0; n + 1];
    let mut r_try = vec![0.0; n + 1];
    let mut slack = vec![0.0; n];
    let mut slack_try = vec![0.0; n];
    let mut sub = vec![0.0; n + 1];
    let mut diag = vec![0.0; n + 1];
    let mut sup = vec![0.0; n + 1];
    let mut rhs = vec![0.0; n + 1];
    let mut dual_try = vec![0.0; n];

    // Cells whose TV weight is numerically zero get no feedback from their
    // dual anywhere in the system, so their dual is slaved directly to
    // f'_ε(g): that is its defining value and it satisfies the feasibility
    // gate to a couple of ulps. Leaving such cells in the Newton update
    // instead would freeze them: their slack carries no weight in the merit
    // (see below), and once the residual part reaches its rounding floor no
    // step is ever accepted, so the dual would never move again.
    let alpha_max = alpha.iter().fold(0.0f64, |m, v| m.max(*v));
    let slaved: Vec<bool> = alpha
        .iter()
        .map(|a| *a <= TV_INACTIVE_FACTOR * alpha_max)
        .collect();

    // Merit for the line search: |R|²_w plus the dual constraint violations
    // scaled to flux units, Σ (α_i s_i / r_i)² h_x. The α weight keeps the
    // two parts commensurate; an unweighted slack term would dominate the
    // merit on nearly-flat cells at small ε, where the slack's curvature in
    // the step is ~dg²/ε and forces microscopic line-search steps. The
    // Newton direction solves the exact linearization of the coupled
    // system, so the merit's directional derivative is -2·merit and
    // sufficient decrease is always attainable away from the rounding
    // floor. (A test on E_ε itself is useless deep into the continuation:
    // the guaranteed decrease per step scales like ε|R|², below the
    // rounding error of E_ε long before |R|_w reaches the requested
    // tolerance.)
    let merit_parts = |theta: &[f64],
                       dual: &[f64],
                       r: &mut [f64],
                       slack: &mut [f64]|
     -> (f64, f64) {
        residual_pd_into(theta, dual, h, alpha, beta, grid, r);
        let rn = grid.weighted_norm(r);
        let mut dn2 = 0.0;
        for i in 0..n {
            let g = (theta[i + 1] - theta[i]) / hx;
            let rr = g.hypot(eps);
            slack[i] = dual[i] * rr - g;
            let scaled = alpha[i] * slack[i] / rr;
            dn2 += scaled * scaled * hx;
        }
        (rn, dn2)
    };

    let h_inf = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slack_floor = DUAL_FLOOR_ULPS * f64::EPSILON * (1.0 + h_inf) / hx;
    let (mut rn, mut dn2) = merit_parts(&theta, &dual, &mut r, &mut slack);
    let mut iterations = 0;
    loop {
        let dual_ok = (0..n).all(|i| {
            let g = (theta[i + 1] - theta[i]) / hx;
            slack[i].abs() <= DUAL_FEASIBILITY_REL * g.hypot(eps) + slack_floor
        });
        if rn <= tol_abs && dual_ok {
            return NewtonOutcome {
                theta,
                dual,
                residual: rn,
                iterations,
                converged: true,
            };
        }
        if iterations >= max_iter {
            return NewtonOutcome {
                theta,
                dual,
                residual: rn,
                iterations,
                converged: false,
            };
        }

        // Eliminate dv from the linearized system: the θ block becomes the
        // usual tridiagonal with curvature c̃ = α(1 − v·g/r)/r + β and a
        // right-hand side carrying the dual infeasibility, −R + A(α s / r).
        let mut prev_m = 0.0;
        for j in 0..=n {
            let (c_right, m) = if j < n {
                let g = (theta[j + 1] - theta[j]) / hx;
                let rr = g.hypot(eps);
                (
                    alpha[j] * (1.0 - dual[j] * g / rr) / rr + beta[j],
                    alpha[j] * slack[j] / rr,
                )
            } else {
                (0.0, 0.0)
            };
            let c_left = if j > 0 {
                let g = (theta[j] - theta[j - 1]) / hx;
                let rr = g.hypot(eps);
                alpha[j - 1] * (1.0 - dual[j - 1] * g / rr) / rr + beta[j - 1]
            } else {
                0.0
            };
            let scale = hx * grid.node_weights[j];
            sub[j] = -c_left / scale;
            sup[j] = -c_right / scale;
            diag[j] = 1.0 + (c_left + c_right) / scale;
            rhs[j] = -r[j] + (prev_m - m) / grid.node_weights[j];
            prev_m = m;
        }
        let delta = solve_tridiagonal(&sub, &diag, &sup, &rhs);

        let mut t = 1.0;
        let mut candidate: Vec<f64>;
        let mut backtracks = 0;
        let (accepted, rn_t, dn2_t) = loop {
            candidate = theta
                .iter()
                .zip(&delta)
                .map(|(x, d)| x + t * d)
                .collect();
            for i in 0..n {
                if slaved[i] {
                    let g_c = (candidate[i + 1] - candidate[i]) / hx;
                    dual_try[i] = (g_c / g_c.hypot(eps)).clamp(-1.0, 1.0);
                    continue;
                }
                let g = (theta[i + 1] - theta[i]) / hx;
                let rr = g.hypot(eps);
                let dg = (delta[i + 1] - delta[i]) / hx;
                let dv = ((1.0 - dual[i] * g / rr) * dg - slack[i]) / rr;
                dual_try[i] = (dual[i] + t * dv).clamp(-1.0, 1.0);
            }
            let (rn_t, dn2_t) =
                merit_parts(&candidate, &dual_try, &mut r_try, &mut slack_try);
            let merit_t = rn_t * rn_t + dn2_t;
            let merit0 = rn * rn + dn2;
            if merit_t <= (1.0 - ARMIJO_SLOPE * t) * merit0 {
                break (true, rn_t, dn2_t);
            }
            if backtracks >= MAX_BACKTRACKS {
                break (merit_t < merit0, rn_t, dn2_t);
            }
            t *= ARMIJO_BACKTRACK;
            backtracks += 1;
        };
        if accepted {
            theta = candidate;
            std::mem::swap(&mut dual, &mut dual_try);
            std::mem::swap(&mut r, &mut r_try);
            std::mem::swap(&mut slack, &mut slack_try);
            rn = rn_t;
            dn2 = dn2_t;
        }
        iterations += 1;
    }
}

/// Minimizes the ε-smoothed objective for a single fixed ε > 0 by damped
/// Newton started from `h`, stopping at `|R|_w ≤ tol·(1 + |h|_w)`.
pub fn solve_smooth(
    eps: f64,
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
    tol: f64,
    max_iter: usize,
) -> Result<GridFunction> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "solve_smooth needs eps > 0, got {eps}"
        )));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "solve_smooth needs tol > 0, got {tol}"
        )));
    }
    let hv = expect_nodal(h, grid, "solve_smooth")?;
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_smooth data".into()));
    }
    let tol_abs = tol * (1.0 + grid.weighted_norm(hv));
    let out = newton(
        eps,
        hv.to_vec(),
        hv,
        c.alpha_cells.values(),
        c.beta_cells.values(),
        grid,
        tol_abs,
        max_iter,
    );
    if !out.converged {
        return Err(Error::NoConvergence {
            residual: out.residual,
            tol: tol_abs,
            iterations: out.iterations,
        });
    }
    Ok(GridFunction::nodal(out.theta))
}

/// Computes the resolvent `θ = (I + ∂Φ)⁻¹ h` by ε-continuation and extracts
/// the sign selection and flux at the final ε.
///
/// A stage that exhausts its Newton budget leaves a warning on the result
/// (with its ε and last residual) instead of failing; the continuation then
/// proceeds from the best iterate.
pub fn solve_resolvent(
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
    schedule: &EpsSchedule,
) -> Result<ResolventSolution> {
    schedule.validate()?;
    let hv = expect_nodal(h, grid, "solve_resolvent")?;
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_resolvent data".into()));
    }
    let alpha = c.alpha_cells.values();
    let beta = c.beta_cells.values();
    let tol_abs = schedule.newton_tol * (1.0 + grid.weighted_norm(hv));

    let mut theta = hv.to_vec();
    let mut dual = vec![0.0; grid.n];
    let mut eps_trace = Vec::new();
    let mut warning: Option<String> = None;
    for eps in schedule.eps_values() {
        let prev = theta.clone();
        let out = newton(
            eps,
            theta,
            hv,
            alpha,
            beta,
            grid,
            tol_abs,
            schedule.max_newton,
        );
        theta = out.theta;
        dual = out.dual;
        if !out.converged {
            // Report both gates: the primal residual and the worst dual
            // slack relative to its per-cell allowance.
            let h_inf = hv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let slack_floor =
                crate::tolerances::DUAL_FLOOR_ULPS * f64::EPSILON * (1.0 + h_inf) / grid.h_x;
            let mut worst = (0.0f64, 0usize, 0.0f64, 0.0f64);
            for i in 0..grid.n {
                let g = (theta[i + 1] - theta[i]) / grid.h_x;
                let rr = g.hypot(eps);
                let s = dual[i] * rr - g;
                let gate = crate::tolerances::DUAL_FEASIBILITY_REL * rr + slack_floor;
                let ratio = s.abs() / gate;
                if ratio > worst.0 {
                    worst = (ratio, i, s, gate);
                }
            }
            let note = format!(
                "newton stalled at eps = {eps:.3e} after {} iterations: \
                 residual {:.3e} (tol {:.3e}), worst dual slack {:.3e} at cell {} \
                 ({:.1}x its gate {:.3e})",
                out.iterations, out.residual, tol_abs, worst.2, worst.1, worst.0, worst.3
            );
            warning = Some(match warning {
                Some(prev_note) => format!("{prev_note}; {note}"),
                None => note,
            });
        }
        let diff: Vec<f64> = theta.iter().zip(&prev).map(|(a, b)| a - b).collect();
        let hx = grid.h_x;
        let mut phi = 0.0;
        let mut grad_part = 0.0;
        for i in 0..grid.n {
            let g = (theta[i + 1] - theta[i]) / hx;
            phi += alpha[i] * g.hypot(eps) * hx + 0.5 * beta[i] * g * g * hx;
            grad_part += beta[i] * g * g * hx;
        }
        let half_norm_sq = 0.5 * grid.weighted_inner(&theta, &theta);
        eps_trace.push(EpsTraceEntry {
            eps,
            energy: phi,
            increment: grid.weighted_norm(&diff),
            apriori_lhs: half_norm_sq + grad_part,
        });
    }

    // The selection comes from the converged dual variable, which equals
    // f'_{ε}(Dθ) up to the dual-feasibility gate but, unlike a value
    // recomputed through f', is not subject to the ~1/(ε h_x) rounding
    // amplification on dead-zone cells. This is what lets the returned
    // triple satisfy the Euler–Lagrange identity to the Newton tolerance.
    let final_eps = schedule.eps_min;
    let n = grid.n;
    let mut varpi = vec![0.0; n];
    let mut flux = vec![0.0; n];
    for i in 0..n {
        let g = (theta[i + 1] - theta[i]) / grid.h_x;
        varpi[i] = dual[i];
        flux[i] = alpha[i] * dual[i] + beta[i] * g;
    }
    let theta_star: Vec<f64> = hv.iter().zip(&theta).map(|(a, b)| a - b).collect();

    Ok(ResolventSolution {
        theta: GridFunction::nodal(theta),
        varpi: GridFunction::cellwise(varpi),
        flux: GridFunction::cellwise(flux),
        theta_star: GridFunction::nodal(theta_star),
        final_eps,
        eps_trace,
        warning,
    })
}

/// Applies the Newton operator `Jφ = A(c·Dφ) + φ` at the state `theta`
/// (with `c_i = α_i f_ε''((Dθ)_i) + β_i`); exposed for derivative checks.
pub fn jacobian_apply(
    eps: f64,
    theta: &GridFunction,
    phi: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
) -> Result<GridFunction> {
    let t = expect_nodal(theta, grid, "jacobian_apply")?;
    let p = expect_nodal(phi, grid, "jacobian_apply")?;
    let alpha = c.alpha_cells.values();
    let beta = c.beta_cells.values();
    let hx = grid.h_x;
    let n = grid.n;
    let mut out = vec![0.0; n + 1];
    let mut prev_q = 0.0;
    for j in 0..=n {
        let q = if j < n {
            let g = (t[j + 1] - t[j]) / hx;
            let curv = alpha[j] * f_eps_second(eps, g)? + beta[j];
            curv * (p[j + 1] - p[j]) / hx
        } else {
            0.0
        };
        out[j] = (prev_q - q) / grid.node_weights[j] + p[j];
        prev_q = q;
    }
    Ok(GridFunction::nodal(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::eval_energy;
    use crate::grid::{build_grid, sample_coefficients};
    use crate::FamilySpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_coeffs(grid: &crate::Grid, a: f64, b: f64) -> CoefficientPair {
        sample_coefficients(
            &FamilySpec::Constant { value: a },
            &FamilySpec::Constant { value: b },
            grid,
        )
        .unwrap()
    }

    #[test]
    fn schedule_validation_and_values() {
        let s = EpsSchedule::default();
        s.validate().unwrap();
        let vals = s.eps_values();
        assert_eq!(vals[0], 1.0);
        assert_eq!(*vals.last().unwrap(), 1e-8);
        assert!(vals.windows(2).all(|p| p[1] < p[0]));

        let bad = EpsSchedule {
            ratio: 1.0,
            ..EpsSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = EpsSchedule {
            eps_min: 2.0,
            ..EpsSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = EpsSchedule {
            eps_min: -1.0,
            ..EpsSchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn gradient_vanishes_at_constant_data() {
        let grid = build_grid(1.0, 16).unwrap();
        let c = unit_coeffs(&grid, 1.0, 1.0);
        let h = GridFunction::nodal(vec![0.7; 17]);
        let r = energy_gradient(0.5, &h, &h, &c, &grid).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-15));
        assert!(energy_gradient(0.0, &h, &h, &c, &grid).is_err());
    }

    /// Finite-difference oracle: ⟨R(θ), φ⟩_w ≈ (E(θ + tφ) − E(θ − tφ))/2t.
    /// The central quotient keeps the truncation error at O(t²) even though
    /// the random nodal fields have O(1/h_x) difference quotients.
    #[test]
    fn gradient_matches_energy_difference_quotient() {
        let grid = build_grid(1.0, 24).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Cosine {
                k: 1,
                amplitude: 0.3,
                offset: 0.8,
            },
            &FamilySpec::Linear {
                intercept: 1.2,
                slope: 0.4,
            },
            &grid,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps = 0.3;
        let tf = GridFunction::nodal(theta.clone());
        let hf = GridFunction::nodal(h.clone());
        let r = energy_gradient(eps, &tf, &hf, &c, &grid).unwrap();
        let pairing = grid.weighted_inner(r.values(), &phi);

        let t = 1e-6;
        let plus: Vec<f64> = theta.iter().zip(&phi).map(|(a, b)| a + t * b).collect();
        let minus: Vec<f64> = theta.iter().zip(&phi).map(|(a, b)| a - t * b).collect();
        let ep = energy_value(
            eps,
            &plus,
            &h,
            c.alpha_cells.values(),
            c.beta_cells.values(),
            &grid,
        );
        let em = energy_value(
            eps,
            &minus,
            &h,
            c.alpha_cells.values(),
            c.beta_cells.values(),
            &grid,
        );
        let fd = (ep - em) / (2.0 * t);
        assert_relative_eq!(pairing, fd, max_relative = 1e-6);
    }

    /// The closed-form Jacobian application matches finite differences of
    /// the gradient.
    #[test]
    fn jacobian_matches_gradient_difference_quotient() {
        let grid = build_grid(1.5, 20).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Hat {
                center: 0.0,
                width: 1.5,
                height: 0.8,
            },
            &FamilySpec::Constant { value: 0.9 },
            &grid,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = GridFunction::nodal(vec![0.0; 21]);
        let eps = 0.2;
        let t = 1e-6;
        let plus: Vec<f64> = theta.iter().zip(&phi).map(|(a, b)| a + t * b).collect();
        let minus: Vec<f64> = theta.iter().zip(&phi).map(|(a, b)| a - t * b).collect();
        let rp = energy_gradient(eps, &GridFunction::nodal(plus), &h, &c, &grid).unwrap();
        let rm = energy_gradient(eps, &GridFunction::nodal(minus), &h, &c, &grid).unwrap();
        let japply = jacobian_apply(
            eps,
            &GridFunction::nodal(theta),
            &GridFunction::nodal(phi),
            &c,
            &grid,
        )
        .unwrap();
        for j in 0..=20 {
            let fd = (rp.values()[j] - rm.values()[j]) / (2.0 * t);
            assert_relative_eq!(japply.values()[j], fd, max_relative = 1e-5, epsilon = 1e-7);
        }
    }

    #[test]
    fn smooth_solve_preserves_constants() {
        let grid = build_grid(1.0, 10).unwrap();
        let c = unit_coeffs(&grid, 1.0, 2.0);
        let h = GridFunction::nodal(vec![-1.3; 11]);
        let theta = solve_smooth(0.7, &h, &c, &grid, 1e-12, 50).unwrap();
        for v in theta.values() {
            assert_relative_eq!(*v, -1.3, epsilon = 1e-12);
        }
    }

    /// With α ≡ 0, β ≡ 1 the problem is linear: −θ'' + θ = h with zero-flux
    /// boundaries, and h = cos(πx) on (−1, 1) gives θ = cos(πx)/(1 + π²).
    #[test]
    fn smooth_solve_matches_analytic_linear_case() {
        let grid = build_grid(1.0, 64).unwrap();
        let c = unit_coeffs(&grid, 0.0, 1.0);
        let h = GridFunction::nodal(
            grid.nodes
                .iter()
                .map(|x| (std::f64::consts::PI * x).cos())
                .collect(),
        );
        let theta = solve_smooth(1.0, &h, &c, &grid, 1e-12, 50).unwrap();
        let factor = 1.0 / (1.0 + std::f64::consts::PI.powi(2));
        let err: Vec<f64> = grid
            .nodes
            .iter()
            .zip(theta.values())
            .map(|(x, v)| v - factor * (std::f64::consts::PI * x).cos())
            .collect();
        let l2 = grid.weighted_norm(&err);
        assert!(l2 < 1.5e-3, "L2 error {l2} too large for n = 64");
    }

    #[test]
    fn smooth_solve_reports_nonconvergence() {
        let grid = build_grid(1.0, 32).unwrap();
        let c = unit_coeffs(&grid, 2.0, 0.5);
        let h = GridFunction::nodal(grid.nodes.iter().map(|x| (3.0 * x).sin()).collect());
        let out = solve_smooth(1e-6, &h, &c, &grid, 1e-12, 1);
        assert!(matches!(out, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn resolvent_of_constant_is_identity() {
        let grid = build_grid(2.0, 12).unwrap();
        let c = unit_coeffs(&grid, 1.5, 0.5);
        let h = GridFunction::nodal(vec![0.25; 13]);
        let sol = solve_resolvent(&h, &c, &grid, &EpsSchedule::default()).unwrap();
        assert_eq!(sol.theta.values(), h.values());
        assert!(sol.varpi.values().iter().all(|v| v.abs() < 1e-12));
        assert!(sol.flux.values().iter().all(|v| v.abs() < 1e-12));
        assert!(sol.theta_star.values().iter().all(|v| *v == 0.0));
        assert!(sol.warning.is_none());
    }

    #[test]
    fn resolvent_invariants_hold_exactly() {
        let grid = build_grid(1.0, 40).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Cosine {
                k: 2,
                amplitude: 0.3,
                offset: 0.6,
            },
            &FamilySpec::Constant { value: 0.8 },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal(grid.nodes.iter().map(|x| x.sin() + 0.3).collect());
        let sol = solve_resolvent(&h, &c, &grid, &EpsSchedule::default()).unwrap();

        // θ* = h − θ and θ̃ = αϖ + βDθ hold bit-exactly by construction.
        for j in 0..=grid.n {
            assert_eq!(
                sol.theta_star.values()[j],
                h.values()[j] - sol.theta.values()[j]
            );
        }
        let g = crate::forward_diff(&sol.theta, &grid).unwrap();
        for i in 0..grid.n {
            let expect = c.alpha_cells.values()[i] * sol.varpi.values()[i]
                + c.beta_cells.values()[i] * g.values()[i];
            assert_eq!(sol.flux.values()[i], expect);
            assert!(sol.varpi.values()[i].abs() <= 1.0);
        }

        // Euler–Lagrange residual: A(flux) + θ − h ≈ 0 in the weighted norm.
        let div = crate::neg_divergence(&sol.flux, &grid).unwrap();
        let res: Vec<f64> = (0..=grid.n)
            .map(|j| div.values()[j] + sol.theta.values()[j] - h.values()[j])
            .collect();
        let tol = 1e-10 * (1.0 + grid.weighted_norm(h.values()));
        assert!(grid.weighted_norm(&res) <= tol);
    }

    /// The resolvent is nonexpansive: |Jh₁ − Jh₂|_w ≤ |h₁ − h₂|_w.
    #[test]
    fn resolvent_is_nonexpansive() {
        let grid = build_grid(1.0, 32).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant { value: 0.7 },
            &FamilySpec::Linear {
                intercept: 1.0,
                slope: 0.3,
            },
            &grid,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let h1: Vec<f64> = (0..33).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h2: Vec<f64> = (0..33).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s1 = solve_resolvent(
                &GridFunction::nodal(h1.clone()),
                &c,
                &grid,
                &EpsSchedule::default(),
            )
            .unwrap();
            let s2 = solve_resolvent(
                &GridFunction::nodal(h2.clone()),
                &c,
                &grid,
                &EpsSchedule::default(),
            )
            .unwrap();
            let dh: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a - b).collect();
            let dt: Vec<f64> = s1
                .theta
                .values()
                .iter()
                .zip(s2.theta.values())
                .map(|(a, b)| a - b)
                .collect();
            assert!(
                grid.weighted_norm(&dt) <= grid.weighted_norm(&dh) * (1.0 + 1e-8) + 1e-10
            );
        }
    }

    /// Different ε-schedules land on the same minimizer.
    #[test]
    fn schedules_agree_on_the_minimizer() {
        let grid = build_grid(1.0, 24).unwrap();
        let c = unit_coeffs(&grid, 0.8, 0.4);
        let h = GridFunction::nodal(
            grid.nodes
                .iter()
                .map(|x| if *x > 0.2 { 1.0 } else { -0.5 })
                .collect(),
        );
        let a = solve_resolvent(&h, &c, &grid, &EpsSchedule::default()).unwrap();
        let b = solve_resolvent(
            &h,
            &c,
            &grid,
            &EpsSchedule {
                eps0: 0.5,
                ratio: 0.5,
                eps_min: 1e-9,
                newton_tol: 1e-11,
                max_newton: 100,
            },
        )
        .unwrap();
        let linf = a
            .theta
            .values()
            .iter()
            .zip(b.theta.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(linf < 1e-6, "schedules disagree by {linf}");
    }

    /// θ minimizes Φ + ½|·−h|²: no random competitor does better.
    #[test]
    fn resolvent_energy_optimality() {
        let grid = build_grid(1.0, 20).unwrap();
        let c = unit_coeffs(&grid, 0.6, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let h: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let hf = GridFunction::nodal(h.clone());
        let sol = solve_resolvent(&hf, &c, &grid, &EpsSchedule::default()).unwrap();
        let value = |z: &GridFunction| {
            let d: Vec<f64> = z.values().iter().zip(&h).map(|(a, b)| a - b).collect();
            eval_energy(0.0, z, &c, &grid).unwrap().total
                + 0.5 * grid.weighted_inner(&d, &d)
        };
        let best = value(&sol.theta);
        for _ in 0..100 {
            let z: Vec<f64> = (0..21).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert!(value(&GridFunction::nodal(z)) + 1e-8 >= best);
        }
    }

    /// Stability bound ½|θ|² + ∫β|∂ₓθ|² ≤ ½|h|² holds at every stage.
    #[test]
    fn apriori_bound_along_the_continuation() {
        let grid = build_grid(1.0, 48).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Hat {
                center: -0.2,
                width: 0.9,
                height: 1.4,
            },
            &FamilySpec::Constant { value: 0.25 },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal(grid.nodes.iter().map(|x| (2.5 * x).cos() - 0.2).collect());
        let schedule = EpsSchedule {
            newton_tol: 1e-12,
            ..EpsSchedule::default()
        };
        let sol = solve_resolvent(&h, &c, &grid, &schedule).unwrap();
        let rhs = 0.5 * grid.weighted_inner(h.values(), h.values());
        for entry in &sol.eps_trace {
            assert!(
                entry.apriori_lhs <= rhs * (1.0 + 1e-10),
                "stability bound violated at eps = {}: {} > {}",
                entry.eps,
                entry.apriori_lhs,
                rhs
            );
        }
    }
}

