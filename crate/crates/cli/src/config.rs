//! Config parsing and validation.
//!
//! The file format is TOML; see `configs/` for a commented example per
//! command. Parsing is strict and *total*: unknown keys are errors, and the
//! walk collects every problem it finds instead of stopping at the first,
//! so a config can be repaired in one round.

use std::collections::BTreeSet;
use std::path::PathBuf;

use toml::Value;
use tvdecomp::{build_grid, sample_coefficients, EpsSchedule, FamilySpec, Tolerances};

/// Which experiment to run; mirrors the CLI subcommand and the config's
/// `command` key, which must agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Mosco,
    Refine,
    Flow,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Mosco => "mosco",
            Command::Refine => "refine",
            Command::Flow => "flow",
        }
    }

    fn from_name(name: &str) -> Option<Command> {
        match name {
            "solve" => Some(Command::Solve),
            "verify" => Some(Command::Verify),
            "mosco" => Some(Command::Mosco),
            "refine" => Some(Command::Refine),
            "flow" => Some(Command::Flow),
            _ => None,
        }
    }
}

/// Flow-specific parameters (`[flow]` section).
#[derive(Debug, Clone)]
pub struct FlowParams {
    pub tau: f64,
    pub steps: usize,
    /// When true, every visited state is dumped to `states.csv`.
    pub dump_states: bool,
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: Command,
    pub half_width: f64,
    pub n: usize,
    pub alpha: FamilySpec,
    pub beta: FamilySpec,
    pub h: FamilySpec,
    pub schedule: EpsSchedule,
    pub tolerances: Tolerances,
    pub flow: Option<FlowParams>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// The parsed TOML document, echoed verbatim into `report.json`.
    pub echo: Value,
}

/// Collects validation problems with dotted-path context.
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    /// Flags any keys of `table` not in `allowed`.
    fn sweep_unknown(&mut self, table: &toml::map::Map<String, Value>, path: &str, allowed: &[&str]) {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for key in table.keys() {
            if !allowed.contains(key.as_str()) {
                self.err(format!("unknown key `{key}` in {path}"));
            }
        }
    }

    fn table<'a>(
        &mut self,
        parent: &'a toml::map::Map<String, Value>,
        path: &str,
        key: &str,
    ) -> Option<&'a toml::map::Map<String, Value>> {
        match parent.get(key) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.err(format!("{path}.{key} must be a table"));
                None
            }
            None => {
                self.err(format!("missing required section {path}.{key}"));
                None
            }
        }
    }

    fn f64(&mut self, table: &toml::map::Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        match table.get(key) {
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(_) => {
                self.err(format!("{path}.{key} must be a number"));
                None
            }
            None => {
                self.err(format!("missing required key {path}.{key}"));
                None
            }
        }
    }

    fn f64_opt(
        &mut self,
        table: &toml::map::Map<String, Value>,
        path: &str,
        key: &str,
    ) -> Option<f64> {
        match table.get(key) {
            None => None,
            Some(Value::Float(v)) => Some(*v),
            Some(Value::Integer(v)) => Some(*v as f64),
            Some(_) => {
                self.err(format!("{path}.{key} must be a number"));
                None
            }
        }
    }

    fn usize_field(
        &mut self,
        table: &toml::map::Map<String, Value>,
        path: &str,
        key: &str,
        required: bool,
    ) -> Option<usize> {
        match table.get(key) {
            Some(Value::Integer(v)) if *v >= 0 => Some(*v as usize),
            Some(_) => {
                self.err(format!("{path}.{key} must be a nonnegative integer"));
                None
            }
            None => {
                if required {
                    self.err(format!("missing required key {path}.{key}"));
                }
                None
            }
        }
    }

    fn bool_opt(
        &mut self,
        table: &toml::map::Map<String, Value>,
        path: &str,
        key: &str,
    ) -> Option<bool> {
        match table.get(key) {
            None => None,
            Some(Value::Boolean(v)) => Some(*v),
            Some(_) => {
                self.err(format!("{path}.{key} must be a boolean"));
                None
            }
        }
    }
}

/// Parses one family table, e.g. `{ family = "cosine", k = 1, … }`.
fn parse_family(
    ck: &mut Checker,
    parent: &toml::map::Map<String, Value>,
    path: &str,
    key: &str,
) -> Option<FamilySpec> {
    let table = ck.table(parent, path, key)?;
    let path = format!("{path}.{key}");
    let family = match table.get("family") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            ck.err(format!("{path}.family must be a string"));
            return None;
        }
        None => {
            ck.err(format!("missing required key {path}.family"));
            return None;
        }
    };
    match family.as_str() {
        "constant" => {
            ck.sweep_unknown(table, &path, &["family", "value"]);
            Some(FamilySpec::Constant {
                value: ck.f64(table, &path, "value")?,
            })
        }
        "linear" => {
            ck.sweep_unknown(table, &path, &["family", "intercept", "slope"]);
            Some(FamilySpec::Linear {
                intercept: ck.f64(table, &path, "intercept")?,
                slope: ck.f64(table, &path, "slope")?,
            })
        }
        "abs" => {
            ck.sweep_unknown(table, &path, &["family"]);
            Some(FamilySpec::Abs)
        }
        "cosine" => {
            ck.sweep_unknown(table, &path, &["family", "k", "amplitude", "offset"]);
            let k = match table.get("k") {
                Some(Value::Integer(v)) if *v >= 0 => Some(*v as u32),
                Some(_) => {
                    ck.err(format!("{path}.k must be a nonnegative integer"));
                    None
                }
                None => {
                    ck.err(format!("missing required key {path}.k"));
                    None
                }
            };
            Some(FamilySpec::Cosine {
                k: k?,
                amplitude: ck.f64(table, &path, "amplitude")?,
                offset: ck.f64(table, &path, "offset")?,
            })
        }
        "hat" => {
            ck.sweep_unknown(table, &path, &["family", "center", "width", "height"]);
            Some(FamilySpec::Hat {
                center: ck.f64(table, &path, "center")?,
                width: ck.f64(table, &path, "width")?,
                height: ck.f64(table, &path, "height")?,
            })
        }
        "piecewise_linear" => {
            ck.sweep_unknown(table, &path, &["family", "points"]);
            let points = match table.get("points") {
                Some(Value::Array(rows)) => {
                    let mut out = Vec::with_capacity(rows.len());
                    let mut ok = true;
                    for (i, row) in rows.iter().enumerate() {
                        match row {
                            Value::Array(pair) if pair.len() == 2 => {
                                let num = |v: &Value| match v {
                                    Value::Float(f) => Some(*f),
                                    Value::Integer(n) => Some(*n as f64),
                                    _ => None,
                                };
                                match (num(&pair[0]), num(&pair[1])) {
                                    (Some(x), Some(y)) => out.push((x, y)),
                                    _ => {
                                        ck.err(format!(
                                            "{path}.points[{i}] entries must be numbers"
                                        ));
                                        ok = false;
                                    }
                                }
                            }
                            _ => {
                                ck.err(format!("{path}.points[{i}] must be a [x, y] pair"));
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        Some(out)
                    } else {
                        None
                    }
                }
                Some(_) => {
                    ck.err(format!("{path}.points must be an array of [x, y] pairs"));
                    None
                }
                None => {
                    ck.err(format!("missing required key {path}.points"));
                    None
                }
            };
            Some(FamilySpec::PiecewiseLinear { points: points? })
        }
        other => {
            ck.err(format!(
                "{path}.family `{other}` is not one of constant, linear, abs, cosine, hat, \
                 piecewise_linear"
            ));
            None
        }
    }
}

/// Parses and validates a config file; on failure returns *every* problem
/// found, not just the first.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<String>> {
    let doc: Value = toml::from_str(text).map_err(|e| vec![format!("TOML syntax: {e}")])?;
    let root = match &doc {
        Value::Table(t) => t,
        _ => return Err(vec!["config root must be a table".into()]),
    };
    let mut ck = Checker { errors: Vec::new() };

    ck.sweep_unknown(
        root,
        "the top level",
        &[
            "command",
            "output_dir",
            "seed",
            "domain",
            "coefficients",
            "data",
            "schedule",
            "tolerances",
            "flow",
        ],
    );

    let command = match root.get("command") {
        Some(Value::String(s)) => match Command::from_name(s) {
            Some(c) => Some(c),
            None => {
                ck.err(format!(
                    "command `{s}` is not one of solve, verify, mosco, refine, flow"
                ));
                None
            }
        },
        Some(_) => {
            ck.err("command must be a string".into());
            None
        }
        None => {
            ck.err("missing required key command".into());
            None
        }
    };

    let output_dir = match root.get("output_dir") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => {
            ck.err("output_dir must be a string".into());
            None
        }
    };

    let seed = match root.get("seed") {
        None => None,
        Some(Value::Integer(v)) if *v >= 0 => Some(*v as u64),
        Some(_) => {
            ck.err("seed must be a nonnegative integer".into());
            None
        }
    };

    let mut half_width = None;
    let mut n = None;
    if let Some(domain) = ck.table(root, "the top level", "domain") {
        ck.sweep_unknown(domain, "[domain]", &["L", "n"]);
        half_width = ck.f64(domain, "domain", "L");
        n = ck.usize_field(domain, "domain", "n", true);
    }

    let mut alpha = None;
    let mut beta = None;
    if let Some(coeffs) = ck.table(root, "the top level", "coefficients") {
        ck.sweep_unknown(coeffs, "[coefficients]", &["alpha", "beta"]);
        alpha = parse_family(&mut ck, coeffs, "coefficients", "alpha");
        beta = parse_family(&mut ck, coeffs, "coefficients", "beta");
    }

    let mut h = None;
    if let Some(data) = ck.table(root, "the top level", "data") {
        ck.sweep_unknown(data, "[data]", &["h"]);
        h = parse_family(&mut ck, data, "data", "h");
    }

    let mut schedule = EpsSchedule::default();
    if let Some(Value::Table(s)) = root.get("schedule") {
        ck.sweep_unknown(
            s,
            "[schedule]",
            &["eps0", "ratio", "eps_min", "newton_tol", "max_newton"],
        );
        if let Some(v) = ck.f64_opt(s, "schedule", "eps0") {
            schedule.eps0 = v;
        }
        if let Some(v) = ck.f64_opt(s, "schedule", "ratio") {
            schedule.ratio = v;
        }
        if let Some(v) = ck.f64_opt(s, "schedule", "eps_min") {
            schedule.eps_min = v;
        }
        if let Some(v) = ck.f64_opt(s, "schedule", "newton_tol") {
            schedule.newton_tol = v;
        }
        if let Some(v) = ck.usize_field(s, "schedule", "max_newton", false) {
            schedule.max_newton = v;
        }
    } else if let Some(other) = root.get("schedule") {
        let _ = other;
        ck.err("schedule must be a table".into());
    }

    let mut tolerances = Tolerances::default();
    if let Some(Value::Table(t)) = root.get("tolerances") {
        ck.sweep_unknown(
            t,
            "[tolerances]",
            &[
                "sgn",
                "chain_rule",
                "el",
                "h2_formula",
                "subgrad_slack",
                "split",
                "subgrad_trials",
            ],
        );
        if let Some(v) = ck.f64_opt(t, "tolerances", "sgn") {
            tolerances.sgn = v;
        }
        if let Some(v) = ck.f64_opt(t, "tolerances", "chain_rule") {
            tolerances.chain_rule = v;
        }
        if let Some(v) = ck.f64_opt(t, "tolerances", "el") {
            tolerances.el = v;
        }
        if let Some(v) = ck.f64_opt(t, "tolerances", "h2_formula") {
            tolerances.h2_formula = v;
        }
        if let Some(v) = ck.f64_opt(t, "tolerances", "subgrad_slack") {
            tolerances.subgrad_slack = v;
        }
        if let Some(v) = ck.f64_opt(t, "tolerances", "split") {
            tolerances.split = v;
        }
        if let Some(v) = ck.usize_field(t, "tolerances", "subgrad_trials", false) {
            tolerances.subgrad_trials = v;
        }
    } else if root.get("tolerances").is_some() {
        ck.err("tolerances must be a table".into());
    }
    for (name, v) in [
        ("sgn", tolerances.sgn),
        ("chain_rule", tolerances.chain_rule),
        ("el", tolerances.el),
        ("h2_formula", tolerances.h2_formula),
        ("subgrad_slack", tolerances.subgrad_slack),
        ("split", tolerances.split),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            ck.err(format!("tolerances.{name} must be positive, got {v}"));
        }
    }

    let mut flow = None;
    match root.get("flow") {
        Some(Value::Table(f)) => {
            ck.sweep_unknown(f, "[flow]", &["tau", "steps", "dump_states"]);
            let tau = ck.f64(f, "flow", "tau");
            let steps = ck.usize_field(f, "flow", "steps", true);
            let dump_states = ck.bool_opt(f, "flow", "dump_states").unwrap_or(false);
            if let (Some(tau), Some(steps)) = (tau, steps) {
                if !(tau > 0.0) || !tau.is_finite() {
                    ck.err(format!("flow.tau must be positive, got {tau}"));
                } else {
                    flow = Some(FlowParams {
                        tau,
                        steps,
                        dump_states,
                    });
                }
            }
        }
        Some(_) => ck.err("flow must be a table".into()),
        None => {
            if command == Some(Command::Flow) {
                ck.err("command = \"flow\" requires a [flow] section with tau and steps".into());
            }
        }
    }

    // Semantic admissibility: the weight pair must be samplable on the grid
    // (α ≥ 0, β strictly positive, families well formed on [−L, L]).
    if let (Some(l), Some(n), Some(alpha), Some(beta), Some(h)) =
        (half_width, n, alpha.as_ref(), beta.as_ref(), h.as_ref())
    {
        match build_grid(l, n) {
            Ok(grid) => {
                if let Err(e) = sample_coefficients(alpha, beta, &grid) {
                    ck.err(format!("coefficients: {e}"));
                }
                if let Err(e) = h.validate(l) {
                    ck.err(format!("data.h: {e}"));
                }
            }
            Err(e) => ck.err(format!("domain: {e}")),
        }
    }
    if let Err(e) = schedule.validate() {
        ck.err(format!("schedule: {e}"));
    }

    if !ck.errors.is_empty() {
        return Err(ck.errors);
    }
    Ok(ExperimentConfig {
        command: command.expect("checked above"),
        half_width: half_width.expect("checked above"),
        n: n.expect("checked above"),
        alpha: alpha.expect("checked above"),
        beta: beta.expect("checked above"),
        h: h.expect("checked above"),
        schedule,
        tolerances,
        flow,
        output_dir,
        seed,
        echo: doc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
command = "solve"

[domain]
L = 1.0
n = 64

[coefficients.alpha]
family = "constant"
value = 1.0

[coefficients.beta]
family = "constant"
value = 1.0

[data.h]
family = "cosine"
k = 1
amplitude = 1.0
offset = 0.0
"#;

    #[test]
    fn minimal_solve_config_is_valid() {
        let cfg = parse_config(MINIMAL).expect("minimal config must parse");
        assert_eq!(cfg.command, Command::Solve);
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.half_width, 1.0);
        assert!(cfg.flow.is_none());
        assert_eq!(cfg.schedule.eps_min, EpsSchedule::default().eps_min);
    }

    #[test]
    fn zero_beta_is_an_admissibility_error() {
        let text = MINIMAL.replace(
            "[coefficients.beta]\nfamily = \"constant\"\nvalue = 1.0",
            "[coefficients.beta]\nfamily = \"constant\"\nvalue = 0.0",
        );
        let errs = parse_config(&text).unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("beta") && e.contains("positive")),
            "expected an admissibility error naming beta, got {errs:?}"
        );
    }

    #[test]
    fn unknown_key_is_an_error_naming_the_key() {
        let text = format!("{MINIMAL}\ngamma = 2.0\n");
        let errs = parse_config(&text).unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("`gamma`")),
            "expected the unknown key to be named, got {errs:?}"
        );
    }

    #[test]
    fn all_errors_are_collected_not_just_the_first() {
        let text = r#"
command = "fly"
gamma = 1.0

[domain]
L = 1.0
n = 64

[coefficients.alpha]
family = "constant"
value = 1.0

[coefficients.beta]
family = "constant"
value = -2.0

[data.h]
family = "cosine"
k = 1
amplitude = 1.0
offset = 0.0

[schedule]
ratio = 1.5
"#;
        let errs = parse_config(text).unwrap_err();
        assert!(errs.len() >= 4, "expected at least 4 errors, got {errs:?}");
        assert!(errs.iter().any(|e| e.contains("`fly`")));
        assert!(errs.iter().any(|e| e.contains("`gamma`")));
        assert!(errs.iter().any(|e| e.contains("beta")));
        assert!(errs.iter().any(|e| e.contains("ratio")));
    }

    #[test]
    fn flow_command_requires_flow_section() {
        let text = MINIMAL.replace("command = \"solve\"", "command = \"flow\"");
        let errs = parse_config(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("[flow]")));
    }

    #[test]
    fn piecewise_linear_points_parse() {
        let text = MINIMAL.replace(
            "[coefficients.beta]\nfamily = \"constant\"\nvalue = 1.0",
            "[coefficients.beta]\nfamily = \"piecewise_linear\"\npoints = [[-1.0, 1.5], [0.0, 1.0], [1.0, 1.5]]",
        );
        let cfg = parse_config(&text).expect("piecewise beta must parse");
        match cfg.beta {
            FamilySpec::PiecewiseLinear { points } => assert_eq!(points.len(), 3),
            other => panic!("wrong family: {other:?}"),
        }
    }
}
