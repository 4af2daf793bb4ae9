use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsde_lab::config::ExperimentConfig;
use bsde_lab::runner::{run, Command};
use bsde_lab::Error;

/// Exact solvers and game-value cross-checks for backward stochastic
/// difference equations on a recombining lattice.
#[derive(Parser)]
#[command(name = "bsde-lab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV tables and JSON summaries.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the adaptive min-max bracket against the driver pointwise.
    LemmaCheck(RunArgs),
    /// Solve the (possibly reflected) backward equation and dump the fields.
    Solve(RunArgs),
    /// Compare explicit weighted expectations against linear solves over
    /// random control policies.
    Dual(RunArgs),
    /// Sup-inf dynamic-programming game value versus the primal solution.
    Game(RunArgs),
    /// Mixed control/stopping game on a reflected problem.
    ReflectedGame(RunArgs),
    /// Sample the evaluation axioms and the norm-driver domination bounds.
    Axioms(RunArgs),
    /// Conjugate-domain inf representation for concave drivers.
    Concave(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.cmd {
        Sub::LemmaCheck(a) => (Command::LemmaCheck, a),
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Dual(a) => (Command::Dual, a),
        Sub::Game(a) => (Command::Game, a),
        Sub::ReflectedGame(a) => (Command::ReflectedGame, a),
        Sub::Axioms(a) => (Command::Axioms, a),
        Sub::Concave(a) => (Command::Concave, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cmd, &cfg, &args.out, args.seed) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::PositivityViolation { .. } | Error::BudgetExceeded { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
