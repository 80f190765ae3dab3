//! Browser demo bindings.
//!
//! Exposes three operations over a JSON string API so the page stays a
//! single static file: [`solve_case`] runs one resolvent solve, [`verify_case`]
//! adds the full decomposition report, and [`flow_case`] runs the implicit
//! gradient flow from the given datum. Every function takes a JSON request
//! and returns a JSON response; failures come back as `{"error": "..."}`
//! rather than exceptions, so the caller only ever parses.
//!
//! The same functions compile natively (the `wasm_bindgen` attribute is
//! inert off-wasm), which is how the unit tests drive them.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use tvdecomp::decomposition::{full_report, DecompositionReport, Tolerances};
use tvdecomp::functionals::{eval_energy, EnergyBreakdown};
use tvdecomp::grid::{build_grid, sample_coefficients, Grid, GridFunction};
use tvdecomp::resolvent::{solve_resolvent, EpsSchedule, ResolventSolution};
use tvdecomp::{run_flow, FamilySpec};

/// Largest grid the page will solve; keeps a misconfigured request from
/// freezing the browser tab.
const MAX_N: usize = 2048;
/// Flow step budget, for the same reason.
const MAX_FLOW_STEPS: usize = 500;

/// Schedule overrides; unset fields keep the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRequest {
    eps0: Option<f64>,
    ratio: Option<f64>,
    eps_min: Option<f64>,
    newton_tol: Option<f64>,
    max_newton: Option<usize>,
}

impl ScheduleRequest {
    fn resolve(&self) -> EpsSchedule {
        let d = EpsSchedule::default();
        EpsSchedule {
            eps0: self.eps0.unwrap_or(d.eps0),
            ratio: self.ratio.unwrap_or(d.ratio),
            eps_min: self.eps_min.unwrap_or(d.eps_min),
            newton_tol: self.newton_tol.unwrap_or(d.newton_tol),
            max_newton: self.max_newton.unwrap_or(d.max_newton),
        }
    }
}

/// One problem instance: domain, coefficients, datum, optional schedule.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseRequest {
    half_width: f64,
    n: usize,
    alpha: FamilySpec,
    beta: FamilySpec,
    data: FamilySpec,
    #[serde(default)]
    schedule: ScheduleRequest,
    /// Seed for the randomized subgradient directions (verify only).
    #[serde(default)]
    seed: Option<u64>,
    /// Implicit step size (flow only).
    #[serde(default)]
    tau: Option<f64>,
    /// Number of implicit steps (flow only).
    #[serde(default)]
    steps: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SolveResponse {
    x: Vec<f64>,
    cell_mids: Vec<f64>,
    data: Vec<f64>,
    theta: Vec<f64>,
    varpi: Vec<f64>,
    flux: Vec<f64>,
    energy: EnergyBreakdown,
    final_eps: f64,
    stages: usize,
    warning: Option<String>,
}

#[derive(Debug, Serialize)]
struct VerifyResponse {
    #[serde(flatten)]
    solve: SolveResponse,
    report: DecompositionReport,
}

#[derive(Debug, Serialize)]
struct FlowResponse {
    x: Vec<f64>,
    tau: f64,
    steps_requested: usize,
    /// May be fewer than requested when the flow reaches a steady state.
    steps_taken: usize,
    times: Vec<f64>,
    energies: Vec<f64>,
    masses: Vec<f64>,
    /// One row per visited state, `states[k][j] = θ^k(x_j)`.
    states: Vec<Vec<f64>>,
}

/// Everything a solve needs, checked and sampled.
struct Problem {
    grid: Grid,
    coeffs: tvdecomp::grid::CoefficientPair,
    h: GridFunction,
    schedule: EpsSchedule,
}

fn build_problem(req: &CaseRequest) -> Result<Problem, String> {
    if req.n > MAX_N {
        return Err(format!("n = {} exceeds the demo cap of {MAX_N}", req.n));
    }
    let grid = build_grid(req.half_width, req.n).map_err(|e| e.to_string())?;
    let coeffs =
        sample_coefficients(&req.alpha, &req.beta, &grid).map_err(|e| e.to_string())?;
    req.data
        .validate(grid.half_width)
        .map_err(|e| format!("data: {e}"))?;
    let h = GridFunction::nodal(
        grid.nodes
            .iter()
            .map(|&x| req.data.eval(x, grid.half_width))
            .collect(),
    );
    let schedule = req.schedule.resolve();
    schedule.validate().map_err(|e| e.to_string())?;
    Ok(Problem {
        grid,
        coeffs,
        h,
        schedule,
    })
}

fn solve_problem(p: &Problem) -> Result<(ResolventSolution, SolveResponse), String> {
    let sol = solve_resolvent(&p.h, &p.coeffs, &p.grid, &p.schedule).map_err(|e| e.to_string())?;
    let energy = eval_energy(sol.final_eps, &sol.theta, &p.coeffs, &p.grid)
        .map_err(|e| e.to_string())?;
    let resp = SolveResponse {
        x: p.grid.nodes.clone(),
        cell_mids: p.grid.cell_mids.clone(),
        data: p.h.values().to_vec(),
        theta: sol.theta.values().to_vec(),
        varpi: sol.varpi.values().to_vec(),
        flux: sol.flux.values().to_vec(),
        energy,
        final_eps: sol.final_eps,
        stages: sol.eps_trace.len(),
        warning: sol.warning.clone(),
    };
    Ok((sol, resp))
}

fn envelope<T: Serialize>(result: Result<T, String>) -> String {
    #[derive(Serialize)]
    struct ErrorResponse {
        error: String,
    }
    let out = match result {
        Ok(resp) => serde_json::to_string(&resp),
        Err(error) => serde_json::to_string(&ErrorResponse { error }),
    };
    // Responses hold only finite floats and strings, so serialization
    // itself cannot fail.
    out.expect("response serialization")
}

fn parse_request(request: &str) -> Result<CaseRequest, String> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

fn solve_case_impl(request: &str) -> Result<SolveResponse, String> {
    let req = parse_request(request)?;
    let problem = build_problem(&req)?;
    let (_, resp) = solve_problem(&problem)?;
    Ok(resp)
}

fn verify_case_impl(request: &str) -> Result<VerifyResponse, String> {
    let req = parse_request(request)?;
    let problem = build_problem(&req)?;
    let (sol, solve) = solve_problem(&problem)?;
    let report = full_report(
        &sol,
        &problem.coeffs,
        &problem.grid,
        &Tolerances::default(),
        req.seed.unwrap_or(0),
    )
    .map_err(|e| e.to_string())?;
    Ok(VerifyResponse { solve, report })
}

fn flow_case_impl(request: &str) -> Result<FlowResponse, String> {
    let req = parse_request(request)?;
    let tau = req.tau.ok_or("flow request needs tau")?;
    let steps = req.steps.ok_or("flow request needs steps")?;
    if steps == 0 || steps > MAX_FLOW_STEPS {
        return Err(format!(
            "steps must lie in 1..={MAX_FLOW_STEPS}, got {steps}"
        ));
    }
    let problem = build_problem(&req)?;
    let traj = run_flow(
        &problem.h,
        tau,
        steps,
        &problem.coeffs,
        &problem.grid,
        &problem.schedule,
    )
    .map_err(|e| e.to_string())?;
    let steps_taken = traj.states.len() - 1;
    Ok(FlowResponse {
        x: problem.grid.nodes.clone(),
        tau,
        steps_requested: steps,
        steps_taken,
        times: (0..traj.states.len()).map(|k| k as f64 * tau).collect(),
        energies: traj.energies,
        masses: traj.masses,
        states: traj
            .states
            .into_iter()
            .map(|s| s.into_values())
            .collect(),
    })
}

/// Solves `θ = (I + ∂Φ_{α,β})⁻¹ h` for the requested case.
///
/// Request: `{half_width, n, alpha, beta, data, schedule?}` where each of
/// `alpha`/`beta`/`data` is a tagged family like
/// `{"family": "cosine", "k": 1, "amplitude": 0.4, "offset": 0.5}`.
/// Response: nodes, datum, minimizer, sign selection, flux, energy split.
#[wasm_bindgen]
pub fn solve_case(request: &str) -> String {
    envelope(solve_case_impl(request))
}

/// [`solve_case`] plus the full decomposition report (sign inclusion,
/// chain rule, Euler–Lagrange, additivity, subgradient checks); `seed`
/// drives the randomized test directions.
#[wasm_bindgen]
pub fn verify_case(request: &str) -> String {
    envelope(verify_case_impl(request))
}

/// Runs the implicit gradient flow `θ^{k+1} = (I + τ∂Φ)⁻¹ θ^k` from the
/// sampled datum. Request adds `tau` and `steps`; the response carries every
/// visited state plus per-state energy and mass for the scrubber.
#[wasm_bindgen]
pub fn flow_case(request: &str) -> String {
    envelope(flow_case_impl(request))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    const BASE: &str = r#"{
        "half_width": 1.0,
        "n": 32,
        "alpha": {"family": "constant", "value": 0.5},
        "beta": {"family": "constant", "value": 1.0},
        "data": {"family": "cosine", "k": 1, "amplitude": 1.0, "offset": 0.2}
    }"#;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).expect("response is JSON")
    }

    #[test]
    fn solve_returns_plottable_arrays() {
        let v = parse(&solve_case(BASE));
        assert!(v.get("error").is_none(), "unexpected error: {v}");
        assert_eq!(v["x"].as_array().unwrap().len(), 33);
        assert_eq!(v["theta"].as_array().unwrap().len(), 33);
        assert_eq!(v["varpi"].as_array().unwrap().len(), 32);
        assert_eq!(v["flux"].as_array().unwrap().len(), 32);
        assert!(v["warning"].is_null());
        assert!(v["energy"]["total"].as_f64().unwrap() > 0.0);
        // Shrinkage: the minimizer moves from the datum toward the mean.
        let theta: Vec<f64> = v["theta"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_f64().unwrap())
            .collect();
        let data: Vec<f64> = v["data"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_f64().unwrap())
            .collect();
        let max_theta = theta.iter().fold(f64::MIN, |m, t| m.max(*t));
        let max_data = data.iter().fold(f64::MIN, |m, t| m.max(*t));
        assert!(max_theta < max_data);
    }

    #[test]
    fn verify_embeds_passing_report() {
        let v = parse(&verify_case(BASE));
        assert!(v.get("error").is_none(), "unexpected error: {v}");
        assert_eq!(v["report"]["pass"], Value::Bool(true));
        assert!(v["report"]["el_residual"].as_f64().unwrap() < 1e-8);
        // Solve fields ride alongside the report.
        assert_eq!(v["x"].as_array().unwrap().len(), 33);
    }

    #[test]
    fn flow_dissipates_and_conserves_mass() {
        let req = r#"{
            "half_width": 1.0,
            "n": 32,
            "alpha": {"family": "constant", "value": 0.5},
            "beta": {"family": "constant", "value": 1.0},
            "data": {"family": "cosine", "k": 1, "amplitude": 1.0, "offset": 0.2},
            "tau": 0.05,
            "steps": 10
        }"#;
        let v = parse(&flow_case(req));
        assert!(v.get("error").is_none(), "unexpected error: {v}");
        let energies: Vec<f64> = v["energies"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_f64().unwrap())
            .collect();
        assert!(energies.windows(2).all(|p| p[1] <= p[0] + 1e-10));
        let masses: Vec<f64> = v["masses"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_f64().unwrap())
            .collect();
        for m in &masses {
            assert!((m - masses[0]).abs() <= 1e-10 * (1.0 + masses[0].abs()));
        }
        let states = v["states"].as_array().unwrap();
        assert_eq!(states.len(), v["times"].as_array().unwrap().len());
        assert_eq!(states[0].as_array().unwrap().len(), 33);
    }

    #[test]
    fn errors_come_back_in_band() {
        let v = parse(&solve_case("not json"));
        assert!(v["error"].as_str().unwrap().starts_with("bad request"));

        let unknown_key = BASE.replacen("\"half_width\"", "\"width\"", 1);
        let v = parse(&solve_case(&unknown_key));
        assert!(v["error"].as_str().unwrap().contains("width"));

        let huge = BASE.replacen("\"n\": 32", "\"n\": 100000", 1);
        let v = parse(&solve_case(&huge));
        assert!(v["error"].as_str().unwrap().contains("cap"));

        let bad_beta = BASE.replacen(
            r#""beta": {"family": "constant", "value": 1.0}"#,
            r#""beta": {"family": "constant", "value": 0.0}"#,
            1,
        );
        let v = parse(&solve_case(&bad_beta));
        assert!(v.get("error").is_some(), "beta = 0 must be rejected: {v}");

        let v = parse(&flow_case(BASE));
        assert_eq!(v["error"].as_str().unwrap(), "flow request needs tau");
    }
}
