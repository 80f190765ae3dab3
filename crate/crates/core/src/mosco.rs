//! Numerical witnesses for the variational convergence `Φ^ε → Φ` as
//! `ε ↓ 0` and its consequence for the resolvents.
//!
//! Two facts are sampled. First, the recovery-sequence ("M2") side is
//! quantitative on a grid: for any probe the constant sequence works
//! because `0 ≤ f_ε(y) − |y| ≤ ε` pointwise, giving
//! `0 ≤ Φ^ε(θ) − Φ(θ) ≤ ε·Σα_i h_x`. Second, the lower-bound ("M1") side
//! and the graph convergence of the subdifferentials are witnessed along
//! the solver-generated sequence `θ^{ε_k}`: solution increments and energy
//! differences must settle monotonically, and the limit energies must
//! dominate. Finite samples witness these limits; they cannot prove them.

use serde::Serialize;

use crate::functionals::eval_energy;
use crate::grid::{expect_nodal, CoefficientPair, Grid, GridFunction};
use crate::resolvent::newton;
use crate::{Error, Result};

/// Newton settings for study sweeps (matches the solver defaults).
const SWEEP_NEWTON_TOL: f64 = 1e-10;
const SWEEP_MAX_NEWTON: usize = 100;

/// Per-ε record of a graph-convergence sweep.
#[derive(Debug, Clone, Serialize)]
pub struct MoscoStudy {
    /// Strictly decreasing smoothing parameters.
    pub eps_values: Vec<f64>,
    /// `Φ^ε(h) − Φ(h)` for the fixed probe `h` at each ε.
    pub gaps: Vec<f64>,
    /// `ε·Σα_i h_x` at each ε.
    pub bounds: Vec<f64>,
    /// `|θ^{ε_k} − θ^{ε_{k−1}}|_w`; the leading entry is 0 by convention
    /// (there is no earlier stage).
    pub solution_increments: Vec<f64>,
    /// `Φ^{ε_k}(θ^{ε_k})` at each ε (no fidelity term).
    pub energy_trace: Vec<f64>,
    /// True when the last three solution increments and the last three
    /// consecutive energy differences are both nonincreasing — the settling
    /// behaviour graph convergence predicts.
    pub tail_monotone: bool,
}

/// Tabulated lower-bound witness along the solver sequence.
#[derive(Debug, Clone, Serialize)]
pub struct M1Witness {
    /// Strictly decreasing smoothing parameters.
    pub eps_values: Vec<f64>,
    /// Unsmoothed energy `Φ(θ^{ε_k})` at each stage.
    pub phi_values: Vec<f64>,
    /// `Φ` at the terminal iterate, the stand-in for the limit `Φ(θ⁰)`.
    pub phi_limit: f64,
    /// True when the tail (last three) of `phi_values` stays at or above
    /// `phi_limit − 10⁻⁶`.
    pub tail_ok: bool,
}

/// Smoothing gap of a fixed probe: returns
/// `(Φ^ε(θ) − Φ(θ), ε·Σα_i h_x)`; the gap always lies in `[0, bound]`.
pub fn m2_gap(
    eps: f64,
    theta: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
) -> Result<(f64, f64)> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "m2_gap needs eps >= 0, got {eps}"
        )));
    }
    let smoothed = eval_energy(eps, theta, c, grid)?;
    let sharp = eval_energy(0.0, theta, c, grid)?;
    let gap = smoothed.total - sharp.total;
    let bound = eps
        * c.alpha_cells
            .values()
            .iter()
            .map(|a| a * grid.h_x)
            .sum::<f64>();
    Ok((gap, bound))
}

fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidSchedule("eps list must be nonempty".into()));
    }
    for e in eps_list {
        if !e.is_finite() || *e <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "eps values must be positive and finite, got {e}"
            )));
        }
    }
    for pair in eps_list.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::InvalidSchedule(format!(
                "eps list must be strictly decreasing, got {} before {}",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

/// Runs the warm-started sweep shared by the two studies, returning the
/// per-stage minimizers.
fn sweep(
    h: &[f64],
    c: &CoefficientPair,
    grid: &Grid,
    eps_list: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let tol_abs = SWEEP_NEWTON_TOL * (1.0 + grid.weighted_norm(h));
    let mut theta = h.to_vec();
    let mut stages = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let out = newton(
            eps,
            theta,
            h,
            c.alpha_cells.values(),
            c.beta_cells.values(),
            grid,
            tol_abs,
            SWEEP_MAX_NEWTON,
        );
        if !out.converged {
            return Err(Error::NoConvergence {
                residual: out.residual,
                tol: tol_abs,
                iterations: out.iterations,
            });
        }
        theta = out.theta;
        stages.push(theta.clone());
    }
    Ok(stages)
}

fn tail_nonincreasing(values: &[f64]) -> bool {
    if values.len() < 3 {
        return true;
    }
    let tail = &values[values.len() - 3..];
    tail[0] >= tail[1] && tail[1] >= tail[2]
}

/// Solves the resolvent problem at each ε of a decreasing list with warm
/// starts and records how the minimizers and their energies settle,
/// together with the fixed-probe smoothing gaps for `h`.
pub fn graph_convergence_study(
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
    eps_list: &[f64],
) -> Result<MoscoStudy> {
    validate_eps_list(eps_list)?;
    let hv = expect_nodal(h, grid, "graph_convergence_study")?;
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("graph_convergence_study data".into()));
    }
    let stages = sweep(hv, c, grid, eps_list)?;

    let mut gaps = Vec::with_capacity(eps_list.len());
    let mut bounds = Vec::with_capacity(eps_list.len());
    let mut increments = Vec::with_capacity(eps_list.len());
    let mut energy_trace = Vec::with_capacity(eps_list.len());
    for (k, &eps) in eps_list.iter().enumerate() {
        let (gap, bound) = m2_gap(eps, h, c, grid)?;
        gaps.push(gap);
        bounds.push(bound);
        let inc = if k == 0 {
            0.0
        } else {
            let d: Vec<f64> = stages[k]
                .iter()
                .zip(&stages[k - 1])
                .map(|(a, b)| a - b)
                .collect();
            grid.weighted_norm(&d)
        };
        increments.push(inc);
        let state = GridFunction::nodal(stages[k].clone());
        energy_trace.push(eval_energy(eps, &state, c, grid)?.total);
    }

    let energy_diffs: Vec<f64> = energy_trace
        .windows(2)
        .map(|p| (p[1] - p[0]).abs())
        .collect();
    let tail_monotone =
        tail_nonincreasing(&increments[1..]) && tail_nonincreasing(&energy_diffs);

    Ok(MoscoStudy {
        eps_values: eps_list.to_vec(),
        gaps,
        bounds,
        solution_increments: increments,
        energy_trace,
        tail_monotone,
    })
}

/// Tabulates the unsmoothed energy along the solver sequence as a
/// finite-sample witness of the lower-bound inequality
/// `liminf Φ(θ^{ε_k}) ≥ Φ(θ⁰)`.
pub fn m1_refinement_witness(
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
    eps_list: &[f64],
) -> Result<M1Witness> {
    validate_eps_list(eps_list)?;
    let hv = expect_nodal(h, grid, "m1_refinement_witness")?;
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("m1_refinement_witness data".into()));
    }
    let stages = sweep(hv, c, grid, eps_list)?;
    let mut phi_values = Vec::with_capacity(stages.len());
    for stage in &stages {
        let state = GridFunction::nodal(stage.clone());
        phi_values.push(eval_energy(0.0, &state, c, grid)?.total);
    }
    let phi_limit = *phi_values.last().expect("eps list is nonempty");
    let tail = &phi_values[phi_values.len().saturating_sub(3)..];
    let tail_ok = tail.iter().all(|p| *p >= phi_limit - 1e-6);
    Ok(M1Witness {
        eps_values: eps_list.to_vec(),
        phi_values,
        phi_limit,
        tail_ok,
    })
}
