//! Subcommand implementations behind the CLI: each one runs an experiment,
//! writes a CSV table and a JSON summary into the output directory, and
//! reports whether its checks passed.
//!
//! Summary schema: {subcommand, params, values, gaps, violations, pass}.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::affine_rep::{build_dual, minmax_eval};
use crate::bsde::{
    dual_expectation, solve_bsde, solve_linear_bsde, BsdeProblem, ControlPolicy, SolutionField,
};
use crate::config::ExperimentConfig;
use crate::evaluations::{check_axioms, check_domination, EvaluationOperator};
use crate::game::{concave_inf_value, game_dpp_value, open_loop_bruteforce};
use crate::generators::Generator;
use crate::lattice::Lattice;
use crate::reflected::{mixed_game_dpp, solve_rbsde};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    LemmaCheck,
    Solve,
    Dual,
    Game,
    ReflectedGame,
    Axioms,
    Concave,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LemmaCheck => "lemma-check",
            Command::Solve => "solve",
            Command::Dual => "dual",
            Command::Game => "game",
            Command::ReflectedGame => "reflected-game",
            Command::Axioms => "axioms",
            Command::Concave => "concave",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Command::LemmaCheck => "lemma_check",
            Command::Solve => "solve",
            Command::Dual => "dual",
            Command::Game => "game",
            Command::ReflectedGame => "reflected_game",
            Command::Axioms => "axioms",
            Command::Concave => "concave",
        }
    }
}

struct Outcome {
    pass: bool,
    csv: String,
    values: Value,
    gaps: Value,
    violations: Value,
}

/// Runs one subcommand; returns whether its checks passed. Artifacts go to
/// `out_dir/<name>.csv` and `out_dir/<name>_summary.json`, byte-identical
/// across reruns with the same config and seed.
pub fn run(
    cmd: Command,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<bool> {
    let seed = seed_override.unwrap_or(cfg.seed);
    let lat = cfg.lattice()?;
    let g = cfg.generator()?;
    let out = match cmd {
        Command::LemmaCheck => lemma_check(cfg, &g, seed)?,
        Command::Solve => solve(cfg, &lat, &g)?,
        Command::Dual => dual(cfg, &lat, &g, seed)?,
        Command::Game => game(cfg, &lat, &g)?,
        Command::ReflectedGame => reflected_game(cfg, &lat, &g)?,
        Command::Axioms => axioms(cfg, &lat, &g, seed)?,
        Command::Concave => concave(cfg, &lat, &g)?,
    };
    let params = json!({
        "lattice": cfg.lattice,
        "generator": cfg.generator,
        "terminal": cfg.terminal,
        "obstacle": cfg.obstacle,
        "grids": cfg.grids,
        "levels": {"s": cfg.levels.s, "t": cfg.terminal_level()},
        "seed": seed,
        "samples": cfg.samples,
        "tolerance": cfg.tolerance,
    });
    let summary = json!({
        "subcommand": cmd.name(),
        "params": params,
        "values": out.values,
        "gaps": out.gaps,
        "violations": out.violations,
        "pass": out.pass,
    });
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::InvalidParameter(format!("cannot create {out_dir:?}: {e}")))?;
    let stem = cmd.file_stem();
    let write = |name: String, data: &str| {
        fs::write(out_dir.join(&name), data)
            .map_err(|e| Error::InvalidParameter(format!("cannot write {name}: {e}")))
    };
    write(format!("{stem}.csv"), &out.csv)?;
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidParameter(format!("summary serialization: {e}")))?;
    text.push('\n');
    write(format!("{stem}_summary.json"), &text)?;
    println!("{}: {}", cmd.name(), if out.pass { "pass" } else { "FAIL" });
    Ok(out.pass)
}

fn solution_csv(lat: &Lattice, sol: &SolutionField) -> String {
    let d = lat.dim();
    let mut csv = String::from("level,node,y");
    for i in 1..=d {
        let _ = write!(csv, ",z_{i}");
    }
    csv.push_str(",a\n");
    for yf in &sol.y {
        let k = yf.level;
        for n in 0..yf.values.len() {
            let _ = write!(csv, "{k},{n},{}", yf.values[n]);
            if k < sol.terminal_level() {
                for &zi in sol.z_at(k).get(n) {
                    let _ = write!(csv, ",{zi}");
                }
            } else {
                for _ in 0..d {
                    csv.push(',');
                }
            }
            let _ = writeln!(csv, ",{}", sol.a_at(k).values[n]);
        }
    }
    csv
}

fn lemma_check(cfg: &ExperimentConfig, g: &Generator, seed: u64) -> Result<Outcome> {
    let grid = cfg.grid_config();
    let w = cfg.lattice.dim + 1;
    let r = cfg.grids.alpha_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("sample,t");
    for i in 0..w {
        let _ = write!(csv, ",x_{i}");
    }
    csv.push_str(",driver,bracket,error\n");
    let samples = cfg.samples.max(1);
    let mut max_err = 0.0f64;
    for i in 0..samples {
        let t: f64 = rng.gen();
        let x: Vec<f64> = (0..w).map(|_| rng.gen_range(-r..=r)).collect();
        let f = g.eval(t, x[0], &x[1..]);
        let v = minmax_eval(g, t, &x, &grid)?;
        let err = (v - f).abs();
        max_err = max_err.max(err);
        let _ = write!(csv, "{i},{t}");
        for xi in &x {
            let _ = write!(csv, ",{xi}");
        }
        let _ = writeln!(csv, ",{f},{v},{err}");
    }
    Ok(Outcome {
        pass: max_err <= cfg.tolerance,
        csv,
        values: json!({"c_rep": g.c_rep, "samples": samples}),
        gaps: json!({"max_identity_error": max_err}),
        violations: json!({}),
    })
}

fn solve(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator) -> Result<Outcome> {
    let xi = cfg.terminal(lat)?;
    let s = cfg.levels.s;
    let (sol, reflected) = match cfg.obstacle(lat)? {
        Some(obs) => (
            solve_rbsde(&BsdeProblem::reflected(g.clone(), xi, obs)?, lat, s)?,
            true,
        ),
        None => (
            solve_bsde(&BsdeProblem::plain(g.clone(), xi), lat, s)?,
            false,
        ),
    };
    Ok(Outcome {
        pass: true,
        csv: solution_csv(lat, &sol),
        values: json!({"root_value": sol.root_value(), "reflected": reflected}),
        gaps: json!({}),
        violations: json!({}),
    })
}

fn dual(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator, seed: u64) -> Result<Outcome> {
    let xi = cfg.terminal(lat)?;
    let p = BsdeProblem::plain(g.clone(), xi);
    let s = cfg.levels.s;
    let end = p.terminal.level;
    let mut csv = String::from("policy,max_gap\n");
    let samples = cfg.samples.max(1);
    let mut max_gap = 0.0f64;
    for i in 0..samples {
        let ctrl = ControlPolicy::random(lat, s, end, cfg.grids.alpha_radius, seed ^ (i as u64));
        let primal = solve_linear_bsde(&ctrl, &p, lat, s)?;
        let explicit = dual_expectation(&ctrl, &p, lat, s)?;
        let gap = primal
            .y_at(s)
            .values
            .iter()
            .zip(&explicit.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_gap = max_gap.max(gap);
        let _ = writeln!(csv, "{i},{gap}");
    }
    Ok(Outcome {
        pass: max_gap <= cfg.tolerance,
        csv,
        values: json!({"policies": samples, "level": s}),
        gaps: json!({"max_duality_gap": max_gap}),
        violations: json!({}),
    })
}

fn game(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator) -> Result<Outcome> {
    let xi = cfg.terminal(lat)?;
    let p = BsdeProblem::plain(g.clone(), xi);
    let grid = cfg.grid_config();
    let r = game_dpp_value(&p, lat, cfg.levels.s, &grid)?;
    // tiny non-adaptive instances admit an exhaustive open-loop cross-check
    let mut values = json!({
        "root_value": r.solution.root_value(),
        "root_argmax": r.root_argmax,
        "root_argmin": r.root_argmin,
    });
    let mut bruteforce_gap: Option<f64> = None;
    if lat.steps() <= 3 && !cfg.grids.adaptive {
        let bf = open_loop_bruteforce(&p, lat, &grid, cfg.levels.s)?;
        values["bruteforce_value"] = json!(bf);
        bruteforce_gap = Some((bf - r.solution.root_value()).abs());
    }
    let pass = r.gap_to_primal <= cfg.tolerance
        && bruteforce_gap.is_none_or(|b| b <= cfg.tolerance);
    Ok(Outcome {
        pass,
        csv: solution_csv(lat, &r.solution),
        values,
        gaps: json!({"gap_to_primal": r.gap_to_primal, "bruteforce_gap": bruteforce_gap}),
        violations: json!({}),
    })
}

fn reflected_game(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator) -> Result<Outcome> {
    let xi = cfg.terminal(lat)?;
    let obs = cfg.obstacle(lat)?.ok_or_else(|| {
        Error::InvalidParameter("reflected-game needs an obstacle in the config".into())
    })?;
    let p = BsdeProblem::reflected(g.clone(), xi, obs)?;
    let grid = cfg.grid_config();
    let r = mixed_game_dpp(&p, lat, cfg.levels.s, &grid)?;
    // Skorokhod residual: pushes must only act on the obstacle contact set
    let obs = p.obstacle.as_ref().unwrap();
    let mut residual = 0.0f64;
    let mut obstacle_violation = 0.0f64;
    for (yf, af) in r.solution.y.iter().zip(&r.solution.a) {
        for n in 0..yf.values.len() {
            let slack = yf.values[n] - obs[yf.level].values[n];
            residual = residual.max(af.values[n].min(slack).abs());
            obstacle_violation = obstacle_violation.max(-slack);
        }
    }
    let pass = r.gap_to_primal <= cfg.tolerance
        && residual <= cfg.tolerance
        && obstacle_violation <= 0.0;
    Ok(Outcome {
        pass,
        csv: solution_csv(lat, &r.solution),
        values: json!({
            "root_value": r.solution.root_value(),
            "root_argmax": r.root_argmax,
            "root_argmin": r.root_argmin,
        }),
        gaps: json!({"gap_to_primal": r.gap_to_primal}),
        violations: json!({
            "skorokhod_residual": residual,
            "obstacle_violation": obstacle_violation,
        }),
    })
}

fn axioms(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator, seed: u64) -> Result<Outcome> {
    let op = EvaluationOperator::new(g.clone(), lat.clone())?;
    let samples = cfg.samples.max(1);
    let ax = check_axioms(&op, samples, seed, cfg.tolerance)?;
    let mu = cfg.mu.unwrap_or(g.c_l1);
    let dom = check_domination(&op, mu, samples, seed, cfg.tolerance)?;
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "monotonicity_gap,{}", ax.monotonicity_gap);
    let _ = writeln!(csv, "identity_gap,{}", ax.identity_gap);
    let _ = writeln!(csv, "recursivity_gap,{}", ax.recursivity_gap);
    let _ = writeln!(csv, "locality_gap,{}", ax.locality_gap);
    let _ = writeln!(csv, "difference_violation,{}", dom.difference_violation);
    let _ = writeln!(csv, "sandwich_violation,{}", dom.sandwich_violation);
    Ok(Outcome {
        pass: ax.pass && dom.pass,
        csv,
        values: json!({"mu": mu, "samples": samples}),
        gaps: json!({
            "identity_gap": ax.identity_gap,
            "recursivity_gap": ax.recursivity_gap,
            "locality_gap": ax.locality_gap,
        }),
        violations: json!({
            "monotonicity_gap": ax.monotonicity_gap,
            "difference_violation": dom.difference_violation,
            "sandwich_violation": dom.sandwich_violation,
        }),
    })
}

fn concave(cfg: &ExperimentConfig, lat: &Lattice, g: &Generator) -> Result<Outcome> {
    let xi = cfg.terminal(lat)?;
    let p = BsdeProblem::plain(g.clone(), xi);
    let s = cfg.levels.s;
    let primal = solve_bsde(&p, lat, s)?;
    let (lo, hi, step, sup) = cfg.fenchel_box();
    let dual = build_dual(g, 0.0, &lo, &hi, &step, &sup)?;
    let sol = concave_inf_value(&p, lat, &dual, s)?;
    let gap = sol.max_abs_gap(&primal);
    Ok(Outcome {
        pass: gap <= cfg.tolerance,
        csv: solution_csv(lat, &sol),
        values: json!({
            "root_value": sol.root_value(),
            "primal_root_value": primal.root_value(),
            "dual_points": dual.len(),
            "dual_max_step": dual.max_step(),
        }),
        gaps: json!({"gap_to_primal": gap}),
        violations: json!({}),
    })
}
