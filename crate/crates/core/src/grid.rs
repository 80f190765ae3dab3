//! Staggered one-dimensional grid and its discrete calculus.
//!
//! States live on the `n + 1` nodes of a uniform partition of `(−L, L)`;
//! gradients, fluxes, and coefficients live on the `n` cell midpoints. The
//! two discrete operators are the forward difference `D` (nodes → cells)
//! and the negative divergence `A` (cells → nodes) with zero ghost flux.
//! They satisfy the summation-by-parts identity
//!
//! ```text
//! Σ_i q_i (Dφ)_i h_x  =  Σ_j A(q)_j φ_j w_j        for all nodal φ,
//! ```
//!
//! *exactly* (to rounding), where `w` are the trapezoid node weights
//! `(h_x/2, h_x, …, h_x, h_x/2)`. Every integration by parts in the crate —
//! Euler–Lagrange residuals, subgradient identities, flux reconstruction —
//! reduces to this identity, so it is enforced by a property test rather
//! than assumed.

use serde::Serialize;

use crate::families::FamilySpec;
use crate::{Error, Result};

/// Which staggering a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// The `n + 1` nodes, including both endpoints.
    Nodes,
    /// The `n` cell midpoints.
    Cells,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Nodes => write!(f, "nodes"),
            Location::Cells => write!(f, "cells"),
        }
    }
}

/// A scalar field sampled on one staggering of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    location: Location,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps nodal values.
    pub fn nodal(values: Vec<f64>) -> Self {
        GridFunction {
            location: Location::Nodes,
            values,
        }
    }

    /// Wraps cell-midpoint values.
    pub fn cellwise(values: Vec<f64>) -> Self {
        GridFunction {
            location: Location::Cells,
            values,
        }
    }

    /// Staggering of the field.
    pub fn location(&self) -> Location {
        self.location
    }

    /// Sampled values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Consumes the field and returns its values.
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the field has no samples.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform staggered grid on `(−L, L)` with `n` cells.
#[derive(Debug, Clone)]
pub struct Grid {
    /// Half-width `L` of the symmetric domain `(−L, L)`.
    pub half_width: f64,
    /// Number of cells; there are `n + 1` nodes.
    pub n: usize,
    /// Uniform spacing `2L/n`.
    pub h_x: f64,
    /// Node coordinates `x_0 = −L < x_1 < … < x_n = L`.
    pub nodes: Vec<f64>,
    /// Cell midpoints `(x_i + x_{i+1})/2`.
    pub cell_mids: Vec<f64>,
    /// Trapezoid node weights `(h_x/2, h_x, …, h_x, h_x/2)`.
    pub node_weights: Vec<f64>,
}

impl Grid {
    /// Weighted inner product `Σ_j a_j b_j w_j` on nodal values.
    pub fn weighted_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.n + 1);
        debug_assert_eq!(b.len(), self.n + 1);
        a.iter()
            .zip(b)
            .zip(&self.node_weights)
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    /// Weighted L² norm `(Σ_j v_j² w_j)^{1/2}` on nodal values.
    pub fn weighted_norm(&self, v: &[f64]) -> f64 {
        self.weighted_inner(v, v).sqrt()
    }

    /// Weighted mean `Σ v_j w_j / (2L)` of nodal values.
    pub fn weighted_mean(&self, v: &[f64]) -> f64 {
        let mass: f64 = v
            .iter()
            .zip(&self.node_weights)
            .map(|(x, w)| x * w)
            .sum();
        mass / (2.0 * self.half_width)
    }
}

/// Builds the uniform staggered grid on `(−L, L)` with `n` cells.
///
/// Node coordinates are computed as `L·(2i − n)/n`, which pins `x_0 = −L`,
/// `x_n = L`, and (for even `n`) the middle node to exactly `0`.
pub fn build_grid(half_width: f64, n: usize) -> Result<Grid> {
    if !half_width.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "half-width must be finite, got {half_width}"
        )));
    }
    if half_width <= 0.0 {
        return Err(Error::InvalidGrid(format!(
            "half-width must be positive, got {half_width}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 cells, got {n}")));
    }
    let h_x = 2.0 * half_width / n as f64;
    let nodes: Vec<f64> = (0..=n)
        .map(|i| half_width * (2.0 * i as f64 - n as f64) / n as f64)
        .collect();
    let cell_mids: Vec<f64> = (0..n).map(|i| 0.5 * (nodes[i] + nodes[i + 1])).collect();
    let mut node_weights = vec![h_x; n + 1];
    node_weights[0] = 0.5 * h_x;
    node_weights[n] = 0.5 * h_x;
    Ok(Grid {
        half_width,
        n,
        h_x,
        nodes,
        cell_mids,
        node_weights,
    })
}

fn expect_field<'a>(
    f: &'a GridFunction,
    grid: &Grid,
    want: Location,
    op: &'static str,
) -> Result<&'a [f64]> {
    if f.location() != want {
        return Err(Error::FieldMismatch {
            op,
            detail: format!("expected a field on {want}, got one on {}", f.location()),
        });
    }
    let want_len = match want {
        Location::Nodes => grid.n + 1,
        Location::Cells => grid.n,
    };
    if f.len() != want_len {
        return Err(Error::FieldMismatch {
            op,
            detail: format!(
                "field on {want} has {} values but the grid needs {want_len}",
                f.len()
            ),
        });
    }
    Ok(f.values())
}

pub(crate) fn expect_nodal<'a>(
    f: &'a GridFunction,
    grid: &Grid,
    op: &'static str,
) -> Result<&'a [f64]> {
    expect_field(f, grid, Location::Nodes, op)
}

pub(crate) fn expect_cellwise<'a>(
    f: &'a GridFunction,
    grid: &Grid,
    op: &'static str,
) -> Result<&'a [f64]> {
    expect_field(f, grid, Location::Cells, op)
}

/// Forward difference `(Dθ)_i = (θ_{i+1} − θ_i)/h_x`, nodes → cells.
pub fn forward_diff(theta: &GridFunction, grid: &Grid) -> Result<GridFunction> {
    let t = expect_nodal(theta, grid, "forward_diff")?;
    let d: Vec<f64> = (0..grid.n)
        .map(|i| (t[i + 1] - t[i]) / grid.h_x)
        .collect();
    Ok(GridFunction::cellwise(d))
}

/// Negative divergence `A`, cells → nodes, with zero ghost flux.
///
/// `A(q)_j = (q_{j−1} − q_j)/w_j` with `q_{−1} = q_n = 0`, i.e.
/// `A(q)_0 = −q_0/(h_x/2)`, `A(q)_n = q_{n−1}/(h_x/2)`, and
/// `A(q)_j = −(q_j − q_{j−1})/h_x` in the interior. This makes `A` the exact
/// adjoint of `D`: `Σ q·Dφ·h_x = Σ A(q)·φ·w` for every nodal `φ`, and
/// `Σ A(q)_j w_j = 0` by telescoping.
pub fn neg_divergence(q: &GridFunction, grid: &Grid) -> Result<GridFunction> {
    let qv = expect_cellwise(q, grid, "neg_divergence")?;
    let n = grid.n;
    let mut a = vec![0.0; n + 1];
    a[0] = -qv[0] / grid.node_weights[0];
    for j in 1..n {
        a[j] = (qv[j - 1] - qv[j]) / grid.node_weights[j];
    }
    a[n] = qv[n - 1] / grid.node_weights[n];
    Ok(GridFunction::nodal(a))
}

/// Weights `α`, `β` sampled on both staggerings, plus their spatial
/// derivatives on cells and the kink locations of either family.
#[derive(Debug, Clone)]
pub struct CoefficientPair {
    /// `α` at cell midpoints.
    pub alpha_cells: GridFunction,
    /// `β` at cell midpoints.
    pub beta_cells: GridFunction,
    /// `α` at nodes.
    pub alpha_nodes: GridFunction,
    /// `β` at nodes.
    pub beta_nodes: GridFunction,
    /// `∂ₓα` at cell midpoints (right-hand slope at kinks).
    pub dalpha_cells: GridFunction,
    /// `∂ₓβ` at cell midpoints (right-hand slope at kinks).
    pub dbeta_cells: GridFunction,
    /// Interior locations where `∂ₓα` or `∂ₓβ` jumps, sorted ascending.
    /// Pointwise identities involving the derivatives are not checked at
    /// nodes straddling these.
    pub kink_xs: Vec<f64>,
}

impl CoefficientPair {
    /// Returns the pair with `α`, `β` (and `∂ₓβ`) multiplied by `factor`;
    /// used by the implicit flow, whose each step is a resolvent of the
    /// rescaled functional. `factor` must be positive to preserve
    /// admissibility.
    pub fn scaled(&self, factor: f64) -> Result<CoefficientPair> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coefficient scaling factor must be positive and finite, got {factor}"
            )));
        }
        let scale = |f: &GridFunction| {
            let vals = f.values().iter().map(|v| factor * v).collect();
            GridFunction {
                location: f.location(),
                values: vals,
            }
        };
        Ok(CoefficientPair {
            alpha_cells: scale(&self.alpha_cells),
            beta_cells: scale(&self.beta_cells),
            alpha_nodes: scale(&self.alpha_nodes),
            beta_nodes: scale(&self.beta_nodes),
            dalpha_cells: scale(&self.dalpha_cells),
            dbeta_cells: scale(&self.dbeta_cells),
            kink_xs: self.kink_xs.clone(),
        })
    }
}

/// Samples `α` and `β` on nodes and cell midpoints and `∂ₓα`, `∂ₓβ` on
/// cells, checking admissibility: every sample must be finite, `α ≥ 0`,
/// `β > 0`.
pub fn sample_coefficients(
    alpha: &FamilySpec,
    beta: &FamilySpec,
    grid: &Grid,
) -> Result<CoefficientPair> {
    alpha.validate(grid.half_width)?;
    beta.validate(grid.half_width)?;
    let l = grid.half_width;
    let sample = |f: &FamilySpec, xs: &[f64]| -> Vec<f64> {
        xs.iter().map(|&x| f.eval(x, l)).collect()
    };
    let alpha_cells = sample(alpha, &grid.cell_mids);
    let alpha_nodes = sample(alpha, &grid.nodes);
    let beta_cells = sample(beta, &grid.cell_mids);
    let beta_nodes = sample(beta, &grid.nodes);
    let derivative = |f: &FamilySpec| -> Vec<f64> {
        grid.cell_mids.iter().map(|&x| f.derivative(x, l)).collect()
    };
    let dalpha_cells = derivative(alpha);
    let dbeta_cells = derivative(beta);
    let mut kink_xs = alpha.kinks(l);
    kink_xs.extend(beta.kinks(l));
    kink_xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kink_xs.dedup();

    for (name, vals) in [
        ("alpha", &alpha_cells),
        ("alpha", &alpha_nodes),
        ("beta", &beta_cells),
        ("beta", &beta_nodes),
        ("dalpha", &dalpha_cells),
        ("dbeta", &dbeta_cells),
    ] {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampled coefficient {name}")));
        }
    }
    let min_alpha = alpha_cells
        .iter()
        .chain(&alpha_nodes)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_alpha < 0.0 {
        return Err(Error::Admissibility(format!(
            "alpha must be nonnegative on the domain, found min(alpha) = {min_alpha}"
        )));
    }
    let min_beta = beta_cells
        .iter()
        .chain(&beta_nodes)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_beta <= 0.0 {
        return Err(Error::Admissibility(format!(
            "beta must be strictly positive on the domain, found min(beta) = {min_beta}"
        )));
    }

    Ok(CoefficientPair {
        alpha_cells: GridFunction::cellwise(alpha_cells),
        beta_cells: GridFunction::cellwise(beta_cells),
        alpha_nodes: GridFunction::nodal(alpha_nodes),
        beta_nodes: GridFunction::nodal(beta_nodes),
        dalpha_cells: GridFunction::cellwise(dalpha_cells),
        dbeta_cells: GridFunction::cellwise(dbeta_cells),
        kink_xs,
    })
}
