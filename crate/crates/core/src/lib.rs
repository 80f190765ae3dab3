//! One-dimensional variational solver and verifier for the functional
//!
//! ```text
//! Φ(θ) = ∫ α(x) |∂ₓθ| dx  +  ½ ∫ β(x) |∂ₓθ|² dx      on Ω = (−L, L),
//! ```
//!
//! with nonnegative weight `α` and strictly positive weight `β`. The crate
//! computes the resolvent `θ = (I + ∂Φ)⁻¹ h` — equivalently the minimizer of
//! `Φ(θ) + ½|θ − h|²` — on a staggered grid, and then *certifies* the
//! structure of the solution:
//!
//! * an explicit flux `θ̃ = α ϖ + β ∂ₓθ` with a selection `ϖ ∈ Sgn(∂ₓθ)`,
//! * the splitting of `h − θ` into a total-variation part and a diffusion
//!   part (both discrete divergences of fluxes),
//! * the soft-threshold chain rule `∂ₓθ = ρ*(θ̃)` and a second-derivative
//!   formula that witnesses the extra regularity of the minimizer,
//! * subgradient inequalities for `Φ`, its total-variation part, and its
//!   diffusion part, probed with randomized test functions.
//!
//! The nonsmooth term is handled by continuation in the regularization
//! `f_ε(y) = √(ε² + y²)`, which decreases monotonically to `|y|`; the same
//! machinery exposes the ε-family's variational convergence (the [`mosco`]
//! module) and drives an implicit-Euler gradient flow (the [`flow`] module).

pub mod decomposition;
pub mod error;
pub mod families;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod mosco;
pub mod oracle;
pub mod resolvent;
pub mod tolerances;

pub use decomposition::{full_report, DecompositionReport, Tolerances};
pub use error::Error;
pub use families::FamilySpec;
pub use flow::{run_flow, FlowTrajectory};
pub use functionals::{eval_energy, f_eps, f_eps_prime, rho_apply, sgn_interval, soft_threshold};
pub use grid::{
    build_grid, forward_diff, neg_divergence, sample_coefficients, CoefficientPair, Grid,
    GridFunction, Location,
};
pub use mosco::{graph_convergence_study, m1_refinement_witness, m2_gap, M1Witness, MoscoStudy};
pub use oracle::brute_force_oracle;
pub use resolvent::{solve_resolvent, solve_smooth, EpsSchedule, ResolventSolution};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
