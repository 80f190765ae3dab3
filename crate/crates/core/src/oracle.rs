//! Exact small-n reference solver for the resolvent problem.
//!
//! The discrete objective
//!
//! ```text
//! F(θ) = ½ Σ_j w_j (θ_j − h_j)² + Σ_i ψ_i(θ_{i+1} − θ_i),
//! ψ_i(Δ) = α_i |Δ| + β_i Δ² / (2 h_x),
//! ```
//!
//! is a chain of pairwise couplings, so it can be minimized exactly by
//! passing derivative messages left to right. The message
//! `V_i'(t) = d/dt min_{θ_0..θ_{i−1}} F(θ_0, …, θ_{i−1}, t)` is a monotone
//! piecewise-linear function, and each update composes `V_i'` with the
//! inverse subdifferential of `ψ_i` — a soft-threshold, also piecewise
//! linear. Every step is closed-form, so the result is exact up to
//! rounding, independent of the Newton solver and of any smoothing. The
//! breakpoint count grows by two per cell, hence the hard cap on n.

use crate::grid::{expect_nodal, CoefficientPair, Grid, GridFunction};
use crate::{Error, Result};

/// Largest number of cells accepted by [`brute_force_oracle`].
pub const MAX_ORACLE_CELLS: usize = 17;

/// Monotone nondecreasing piecewise-linear function.
///
/// `xs` are strictly increasing breakpoints with values `ys`;
/// `slopes[k]` applies on the k-th interval, with `slopes[0]` left of
/// `xs[0]` and `slopes[xs.len()]` right of the last breakpoint.
#[derive(Debug, Clone)]
struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl PiecewiseLinear {
    fn affine(slope: f64, root: f64) -> Self {
        PiecewiseLinear {
            xs: vec![root],
            ys: vec![0.0],
            slopes: vec![slope, slope],
        }
    }

    /// Inverse subdifferential of `Δ ↦ a|Δ| + Δ²/(2·outer_slope)`: zero on
    /// [−a, a] and affine with the given slope outside.
    fn soft_threshold(a: f64, outer_slope: f64) -> Self {
        if a == 0.0 {
            return PiecewiseLinear::affine(outer_slope, 0.0);
        }
        PiecewiseLinear {
            xs: vec![-a, a],
            ys: vec![0.0, 0.0],
            slopes: vec![outer_slope, 0.0, outer_slope],
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[last] {
            return self.ys[last] + self.slopes[last + 1] * (x - self.xs[last]);
        }
        let k = self.xs.partition_point(|p| *p <= x) - 1;
        self.ys[k] + self.slopes[k + 1] * (x - self.xs[k])
    }

    fn slope_at(&self, x: f64) -> f64 {
        if x < self.xs[0] {
            return self.slopes[0];
        }
        let k = self.xs.partition_point(|p| *p <= x);
        self.slopes[k]
    }

    fn add(&self, other: &PiecewiseLinear) -> PiecewiseLinear {
        let mut xs: Vec<f64> = self.xs.iter().chain(&other.xs).copied().collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        let ys: Vec<f64> = xs.iter().map(|x| self.eval(*x) + other.eval(*x)).collect();
        let m = xs.len();
        let mut slopes = Vec::with_capacity(m + 1);
        for k in 0..=m {
            // A point strictly inside the k-th interval of the merged grid.
            let rep = if k == 0 {
                xs[0] - 1.0
            } else if k == m {
                xs[m - 1] + 1.0
            } else {
                0.5 * (xs[k - 1] + xs[k])
            };
            slopes.push(self.slope_at(rep) + other.slope_at(rep));
        }
        PiecewiseLinear { xs, ys, slopes }
    }

    /// Adds the affine function `x ↦ slope·x + offset` in place.
    fn add_affine(&mut self, slope: f64, offset: f64) {
        for (y, x) in self.ys.iter_mut().zip(&self.xs) {
            *y += slope * x + offset;
        }
        for s in &mut self.slopes {
            *s += slope;
        }
    }

    /// Functional inverse; requires every slope to be strictly positive.
    fn inverse(&self) -> PiecewiseLinear {
        debug_assert!(self.slopes.iter().all(|s| *s > 0.0));
        PiecewiseLinear {
            xs: self.ys.clone(),
            ys: self.xs.clone(),
            slopes: self.slopes.iter().map(|s| 1.0 / s).collect(),
        }
    }

    /// The solution of `f(x) = 0` for strictly increasing `f`.
    fn root(&self) -> f64 {
        if self.ys[0] >= 0.0 {
            return self.xs[0] - self.ys[0] / self.slopes[0];
        }
        for k in 1..self.xs.len() {
            if self.ys[k] >= 0.0 {
                return self.xs[k - 1] - self.ys[k - 1] / self.slopes[k];
            }
        }
        let last = self.xs.len() - 1;
        self.xs[last] - self.ys[last] / self.slopes[last + 1]
    }
}

/// Solves the resolvent problem exactly by dynamic programming.
///
/// Returns [`Error::OracleTooLarge`] when the grid has more than
/// [`MAX_ORACLE_CELLS`] cells; the breakpoint bookkeeping is meant for
/// cross-checking the iterative solver on small grids, not for production
/// sizes.
pub fn brute_force_oracle(
    h: &GridFunction,
    c: &CoefficientPair,
    grid: &Grid,
) -> Result<GridFunction> {
    let n = grid.n;
    if n > MAX_ORACLE_CELLS {
        return Err(Error::OracleTooLarge {
            n,
            max: MAX_ORACLE_CELLS,
        });
    }
    let hv = expect_nodal(h, grid, "brute_force_oracle")?;
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("brute_force_oracle data".into()));
    }
    let alpha = c.alpha_cells.values();
    let beta = c.beta_cells.values();
    let w = &grid.node_weights;

    // Forward sweep: V_0'(t) = w_0 (t − h_0); for each cell i the chain
    //   T_i(r)   = (V_i')⁻¹(r) + (∂ψ_i)⁻¹(r)
    //   U_i      = T_i⁻¹            (optimal coupling message)
    //   V_{i+1}' = w_{i+1}(· − h_{i+1}) + U_i.
    let mut vprime = PiecewiseLinear::affine(w[0], hv[0]);
    let mut messages: Vec<(PiecewiseLinear, PiecewiseLinear)> = Vec::with_capacity(n);
    for i in 0..n {
        let inv_v = vprime.inverse();
        let st = PiecewiseLinear::soft_threshold(alpha[i], grid.h_x / beta[i]);
        let u = inv_v.add(&st).inverse();
        vprime = u.clone();
        vprime.add_affine(w[i + 1], -w[i + 1] * hv[i + 1]);
        messages.push((inv_v, u));
    }

    // Backward sweep: θ_n is the root of V_n'; each θ_i follows from the
    // shared derivative value r_i = U_i(θ_{i+1}) via θ_i = (V_i')⁻¹(r_i).
    let mut theta = vec![0.0; n + 1];
    theta[n] = vprime.root();
    for i in (0..n).rev() {
        let r = messages[i].1.eval(theta[i + 1]);
        theta[i] = messages[i].0.eval(r);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("brute_force_oracle result".into()));
    }
    Ok(GridFunction::nodal(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, sample_coefficients};
    use crate::resolvent::{solve_resolvent, solve_smooth, EpsSchedule};
    use crate::FamilySpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(theta: &[f64], h: &[f64], c: &CoefficientPair, grid: &Grid) -> f64 {
        let mut f = 0.0;
        for j in 0..=grid.n {
            let d = theta[j] - h[j];
            f += 0.5 * grid.node_weights[j] * d * d;
        }
        for i in 0..grid.n {
            let delta = theta[i + 1] - theta[i];
            f += c.alpha_cells.values()[i] * delta.abs()
                + c.beta_cells.values()[i] * delta * delta / (2.0 * grid.h_x);
        }
        f
    }

    fn random_config(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (Grid, CoefficientPair, GridFunction) {
        let grid = build_grid(1.0, n).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant {
                value: rng.gen_range(0.05..1.5),
            },
            &FamilySpec::Constant {
                value: rng.gen_range(0.2..2.0),
            },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal((0..=n).map(|_| rng.gen_range(-2.0..2.0)).collect());
        (grid, c, h)
    }

    #[test]
    fn piecewise_linear_algebra() {
        let f = PiecewiseLinear::soft_threshold(1.0, 2.0);
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(2.0), 2.0);
        assert_eq!(f.eval(-3.0), -4.0);

        let g = PiecewiseLinear::affine(1.0, 0.0);
        let sum = f.add(&g); // strictly increasing now
        assert_eq!(sum.eval(2.0), 4.0);
        let inv = sum.inverse();
        for x in [-2.7, -0.3, 0.0, 0.9, 3.1] {
            assert_relative_eq!(inv.eval(sum.eval(x)), x, epsilon = 1e-12);
        }
        assert_relative_eq!(sum.root(), 0.0, epsilon = 1e-12);

        // sum(x) = x on [−1, 1] and 3x − 2 to the right, so sum(x) = 2 at x = 4/3.
        let mut shifted = sum.clone();
        shifted.add_affine(0.0, -2.0);
        assert_relative_eq!(shifted.root(), 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_rejects_large_grids() {
        let grid = build_grid(1.0, 18).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant { value: 1.0 },
            &FamilySpec::Constant { value: 1.0 },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal(vec![0.0; 19]);
        assert!(matches!(
            brute_force_oracle(&h, &c, &grid),
            Err(Error::OracleTooLarge { n: 18, max: 17 })
        ));
    }

    #[test]
    fn oracle_fixes_constants() {
        let grid = build_grid(1.0, 8).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant { value: 0.7 },
            &FamilySpec::Constant { value: 1.3 },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal(vec![0.42; 9]);
        let theta = brute_force_oracle(&h, &c, &grid).unwrap();
        for v in theta.values() {
            assert_relative_eq!(*v, 0.42, epsilon = 1e-12);
        }
    }

    /// With α ≡ 0 the objective is a quadratic both solvers handle; their
    /// minimizers must agree.
    #[test]
    fn oracle_matches_newton_on_quadratic_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let grid = build_grid(1.0, 12).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant { value: 0.0 },
            &FamilySpec::Linear {
                intercept: 1.0,
                slope: 0.5,
            },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal((0..13).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let dp = brute_force_oracle(&h, &c, &grid).unwrap();
        let newton = solve_smooth(1.0, &h, &c, &grid, 1e-13, 50).unwrap();
        for (a, b) in dp.values().iter().zip(newton.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    /// Odd data with even coefficients has an odd minimizer (the objective
    /// is invariant under θ ↦ −reverse(θ)); the DP must inherit it.
    #[test]
    fn oracle_preserves_odd_symmetry() {
        let grid = build_grid(1.0, 10).unwrap();
        let c = sample_coefficients(
            &FamilySpec::Constant { value: 0.6 },
            &FamilySpec::Cosine {
                k: 2,
                amplitude: 0.4,
                offset: 1.0,
            },
            &grid,
        )
        .unwrap();
        let h = GridFunction::nodal(grid.nodes.iter().map(|x| x + 0.3 * (4.0 * x).sin()).collect());
        let theta = brute_force_oracle(&h, &c, &grid).unwrap();
        let t = theta.values();
        for j in 0..=10 {
            assert_relative_eq!(t[j], -t[10 - j], epsilon = 1e-10);
        }
    }

    /// First-order optimality: summation flux F with A(F) = h − θ must
    /// close at the right boundary and lie in the subdifferential of each
    /// cell's coupling.
    #[test]
    fn oracle_satisfies_first_order_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..30 {
            let n = rng.gen_range(2..=17);
            let (grid, c, h) = random_config(&mut rng, n);
            let theta = brute_force_oracle(&h, &c, &grid).unwrap();
            let t = theta.values();
            let hv = h.values();

            let mut flux = vec![0.0; n];
            let mut carry = 0.0;
            for j in 0..n {
                carry -= grid.node_weights[j] * (hv[j] - t[j]);
                flux[j] = carry;
            }
            let closure = flux[n - 1] - grid.node_weights[n] * (hv[n] - t[n]);
            assert!(
                closure.abs() < 1e-9,
                "trial {trial}: flux fails to close, defect {closure:.2e}"
            );

            for i in 0..n {
                let gap = t[i + 1] - t[i];
                let a = c.alpha_cells.values()[i];
                let b = c.beta_cells.values()[i];
                if gap.abs() <= 1e-9 {
                    assert!(
                        flux[i].abs() <= a + 1e-9,
                        "trial {trial}, cell {i}: |{}| > α = {a}",
                        flux[i]
                    );
                } else {
                    let expect = a * gap.signum() + b * gap / grid.h_x;
                    assert_relative_eq!(flux[i], expect, epsilon = 1e-8, max_relative = 1e-8);
                }
            }
        }
    }

    /// Projected-subgradient descent with per-node polishing cannot beat
    /// the DP objective value.
    #[test]
    fn oracle_beats_subgradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        for _ in 0..5 {
            let n = rng.gen_range(3..=9);
            let (grid, c, h) = random_config(&mut rng, n);
            let dp = brute_force_oracle(&h, &c, &grid).unwrap();
            let f_dp = objective(dp.values(), h.values(), &c, &grid);

            let hv = h.values();
            let mut z: Vec<f64> = hv.to_vec();
            let mut best = z.clone();
            let mut f_best = objective(&z, hv, &c, &grid);
            for k in 1..=20_000usize {
                // Any subgradient: sign(Δ) on non-flat cells, 0 on flat ones.
                let mut g = vec![0.0; n + 1];
                for j in 0..=n {
                    g[j] = grid.node_weights[j] * (z[j] - hv[j]);
                }
                for i in 0..n {
                    let delta = z[i + 1] - z[i];
                    let s = c.alpha_cells.values()[i] * delta.signum()
                        + c.beta_cells.values()[i] * delta / grid.h_x;
                    g[i + 1] += s;
                    g[i] -= s;
                }
                let step = 0.5 / k as f64;
                for j in 0..=n {
                    z[j] -= step * g[j];
                }
                let f = objective(&z, hv, &c, &grid);
                if f < f_best {
                    f_best = f;
                    best = z.clone();
                }
            }
            // Cyclic exact line minimization over single coordinates.
            for _ in 0..200 {
                for j in 0..=n {
                    let mut lo = best[j] - 1.0;
                    let mut hi = best[j] + 1.0;
                    for _ in 0..60 {
                        let m1 = lo + (hi - lo) / 3.0;
                        let m2 = hi - (hi - lo) / 3.0;
                        let mut z1 = best.clone();
                        z1[j] = m1;
                        let mut z2 = best.clone();
                        z2[j] = m2;
                        if objective(&z1, hv, &c, &grid) < objective(&z2, hv, &c, &grid) {
                            hi = m2;
                        } else {
                            lo = m1;
                        }
                    }
                    best[j] = 0.5 * (lo + hi);
                }
            }
            f_best = f_best.min(objective(&best, hv, &c, &grid));
            assert!(
                f_dp <= f_best + 1e-9,
                "DP objective {f_dp} worse than competitor {f_best}"
            );
        }
    }

    /// The ε-continuation solver must land on the DP minimizer.
    #[test]
    fn newton_solver_agrees_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let schedule = EpsSchedule {
            eps_min: 1e-10,
            newton_tol: 1e-12,
            ..EpsSchedule::default()
        };
        for trial in 0..10 {
            let n = if trial % 2 == 0 { 9 } else { 17 };
            let (grid, c, h) = random_config(&mut rng, n);
            let dp = brute_force_oracle(&h, &c, &grid).unwrap();
            let sol = solve_resolvent(&h, &c, &grid, &schedule).unwrap();
            let linf = dp
                .values()
                .iter()
                .zip(sol.theta.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(linf < 1e-4, "trial {trial}: solver off by {linf:.2e}");
        }
    }
}
