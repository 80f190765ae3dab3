//! `tvdecomp <command> --config <path> [--out <dir>] [--seed <int>]`
//!
//! Exit codes: 0 all checks passed, 1 a check or the solver failed
//! (diagnostics in `report.json`), 2 bad usage or invalid config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod run;

use config::Command;

#[derive(Parser)]
#[command(
    name = "tvdecomp",
    version,
    about = "Variational solver and verifier for weighted TV + Dirichlet energies on (-L, L)"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the resolvent and write solution.csv + report.json.
    Solve(CommonArgs),
    /// Solve, then check the full decomposition report.
    Verify(CommonArgs),
    /// Run the smoothing-parameter convergence study (mosco.csv).
    Mosco(CommonArgs),
    /// Solve at n, 2n, 4n and write the refinement table (refine.csv).
    Refine(CommonArgs),
    /// Run the implicit gradient flow (flow.csv).
    Flow(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized test directions; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Mosco(a) => (Command::Mosco, a),
        Cmd::Refine(a) => (Command::Refine, a),
        Cmd::Flow(a) => (Command::Flow, a),
    };

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match config::parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("invalid config {}:", args.config.display());
            for e in &errors {
                eprintln!("  - {e}");
            }
            return ExitCode::from(2);
        }
    };
    if cfg.command != command {
        eprintln!(
            "config says command = \"{}\" but the CLI was invoked as `{}`",
            cfg.command.name(),
            command.name()
        );
        return ExitCode::from(2);
    }

    match run::run(&cfg, args.out.clone(), args.seed) {
        Ok(outcome) => {
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            if outcome.pass {
                println!("{}: PASS", command.name());
                ExitCode::SUCCESS
            } else {
                println!("{}: FAIL", command.name());
                for f in &outcome.failures {
                    println!("  - {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
