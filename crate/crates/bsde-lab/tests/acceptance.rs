//! Acceptance gate: one test per shipped guarantee, each printing a
//! pass/fail line and enforcing its runtime budget. Tolerances are pinned;
//! do not loosen them to make a regression pass.

use std::time::Instant;

use bsde_lab::affine_rep::{big_f, build_dual, minmax_eval, GridConfig, SupGrid};
use bsde_lab::bsde::{
    dual_expectation, solve_bsde, solve_linear_bsde, BsdeProblem, ControlPolicy,
};
use bsde_lab::evaluations::{check_axioms, check_domination, EvaluationOperator};
use bsde_lab::game::{game_dpp_value, open_loop_bruteforce, concave_inf_value};
use bsde_lab::generators::Generator;
use bsde_lab::lattice::{Lattice, NodeField};
use bsde_lab::reflected::{mixed_game_dpp, solve_rbsde};
use bsde_lab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn report(criterion: &str, pass: bool) {
    println!("acceptance: {criterion}: {}", if pass { "pass" } else { "FAIL" });
    assert!(pass, "{criterion}");
}

fn budget(criterion: &str, start: Instant, limit_secs: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_secs,
        "{criterion} took {elapsed:.1}s, budget {limit_secs}s"
    );
}

fn bt(lat: &Lattice) -> NodeField {
    NodeField::from_fn(lat, lat.steps(), |b| b[0])
}

fn catalog(dim: usize) -> Vec<Generator> {
    vec![
        Generator::zero(dim),
        Generator::affine(0.2, 0.3, vec![0.4; dim], dim).unwrap(),
        Generator::mu_norm(1.0, dim).unwrap(),
        Generator::mu_abs_z(1.0, dim).unwrap(),
        Generator::neg_mu_abs_z(1.0, dim).unwrap(),
    ]
}

#[test]
fn criterion_1_bracket_identity() {
    let start = Instant::now();
    let cfg = GridConfig::adaptive(3.0, 1.0, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_err = 0.0f64;
    for g in catalog(1) {
        for _ in 0..100 {
            let t: f64 = rng.gen();
            let x = [rng.gen_range(-3.0..=3.0), rng.gen_range(-3.0..=3.0)];
            let v = minmax_eval(&g, t, &x, &cfg).unwrap();
            max_err = max_err.max((v - g.eval(t, x[0], &x[1..])).abs());
        }
    }
    budget("criterion 1", start, 5.0);
    report(
        &format!("criterion 1 (min-max bracket identity, max err {max_err:.2e})"),
        max_err <= TOL,
    );
}

/// Independent oracle for the weighted expectation: enumerate every branch
/// sequence from a start node, compounding the multiplicative weight step by
/// step along the path.
fn enumerate_paths(
    ctrl: &ControlPolicy,
    p: &BsdeProblem,
    lat: &Lattice,
    t_level: usize,
    node: usize,
) -> f64 {
    let g = &p.generator;
    let c = g.c_rep;
    let end = p.terminal.level;
    let steps = end - t_level;
    let branches = lat.branches();
    let dt = lat.dt();
    let branch_w = (1.0 / branches as f64).powi(steps as i32);
    let mut total = 0.0;
    for code in 0..branches.pow(steps as u32) {
        let mut n = node;
        let mut gamma = 1.0;
        let mut acc = 0.0;
        let mut rest = code;
        for k in t_level..end {
            let beta = ctrl.beta_at(k).get(n).to_vec();
            let alpha = ctrl.alpha_at(k).get(n).to_vec();
            acc += gamma * big_f(g, lat.time(k), &beta, &alpha).unwrap() * dt;
            let mask = rest % branches;
            rest /= branches;
            let mut factor = 1.0 + c * beta[0] * dt;
            for i in 0..lat.dim() {
                factor += c * beta[1 + i] * Lattice::increment_sign(mask, i) * lat.sqrt_dt();
            }
            gamma *= factor;
            n = lat.successor(k, n, mask);
        }
        total += branch_w * (acc + gamma * p.terminal.values[n]);
    }
    total
}

#[test]
fn criterion_2_discrete_duality() {
    let start = Instant::now();
    let mut max_gap = 0.0f64;
    for (dim, steps, g) in [
        (1usize, 16usize, Generator::mu_abs_z(1.0, 1).unwrap()),
        (2, 6, Generator::mu_norm(0.5, 2).unwrap()),
    ] {
        let lat = Lattice::build(1.0, steps, dim).unwrap();
        let xi = NodeField::from_fn(&lat, steps, |b| b[0] + 0.5 * b[..dim].iter().sum::<f64>());
        let p = BsdeProblem::plain(g, xi);
        for seed in 0..20u64 {
            for t in [0, steps / 2] {
                let ctrl = ControlPolicy::random(&lat, t, steps, 2.0, 1000 + seed);
                let primal = solve_linear_bsde(&ctrl, &p, &lat, t).unwrap();
                let explicit = dual_expectation(&ctrl, &p, &lat, t).unwrap();
                for (a, b) in primal.y_at(t).values.iter().zip(&explicit.values) {
                    max_gap = max_gap.max((a - b).abs());
                }
            }
        }
    }
    // independent cross-check by full path enumeration on small horizons
    let mut max_oracle_gap = 0.0f64;
    for (dim, steps, levels) in [(1usize, 8usize, vec![0usize, 3]), (2, 6, vec![0])] {
        let lat = Lattice::build(1.0, steps, dim).unwrap();
        let g = Generator::mu_norm(0.5, dim).unwrap();
        let xi = NodeField::from_fn(&lat, steps, |b| b[0] * b[0]);
        let p = BsdeProblem::plain(g, xi);
        for t in levels {
            let ctrl = ControlPolicy::random(&lat, t, steps, 2.0, 77);
            let explicit = dual_expectation(&ctrl, &p, &lat, t).unwrap();
            for n in 0..lat.node_count(t) {
                let oracle = enumerate_paths(&ctrl, &p, &lat, t, n);
                max_oracle_gap = max_oracle_gap.max((oracle - explicit.values[n]).abs());
            }
        }
    }
    budget("criterion 2", start, 10.0);
    report(
        &format!(
            "criterion 2 (discrete duality, gap {max_gap:.2e}, path oracle {max_oracle_gap:.2e})"
        ),
        max_gap <= TOL && max_oracle_gap <= TOL,
    );
}

#[test]
fn criterion_3_game_equals_primal() {
    let start = Instant::now();
    let lat = Lattice::build(1.0, 32, 1).unwrap();
    let cfg = GridConfig::adaptive(3.0, 1.0, 2, 2);
    let terminals: Vec<NodeField> = vec![
        bt(&lat),
        NodeField::from_fn(&lat, 32, |b| b[0] * b[0]),
        NodeField::from_fn(&lat, 32, |b| (1.0 - b[0]).max(0.0)),
    ];
    let gens = vec![
        Generator::zero(1),
        Generator::constant(0.4, 1),
        Generator::affine(0.2, 0.3, vec![0.4], 1).unwrap(),
        Generator::mu_abs_z(1.0, 1).unwrap(),
        Generator::mu_norm(1.0, 1).unwrap(),
    ];
    let mut max_gap = 0.0f64;
    for g in &gens {
        for xi in &terminals {
            let p = BsdeProblem::plain(g.clone(), xi.clone());
            let r = game_dpp_value(&p, &lat, 0, &cfg).unwrap();
            max_gap = max_gap.max(r.gap_to_primal);
        }
    }
    // closed-form anchor: f = mu |z|, xi = B_T gives root value mu T
    let anchor = game_dpp_value(
        &BsdeProblem::plain(Generator::mu_abs_z(1.0, 1).unwrap(), bt(&lat)),
        &lat,
        0,
        &cfg,
    )
    .unwrap();
    let anchor_err = (anchor.solution.root_value() - 1.0).abs();
    budget("criterion 3", start, 60.0);
    report(
        &format!("criterion 3 (game = primal, gap {max_gap:.2e}, anchor err {anchor_err:.2e})"),
        max_gap <= TOL && anchor_err <= TOL,
    );
}

#[test]
fn criterion_4_uniform_grid_degradation() {
    let start = Instant::now();
    let lat = Lattice::build(1.0, 16, 1).unwrap();
    let g = Generator::mu_abs_z(0.5, 1).unwrap();
    let p = BsdeProblem::plain(g.clone(), bt(&lat));
    let primal = solve_bsde(&p, &lat, 0).unwrap();
    let mut max_y = 0.0f64;
    let mut max_z = 0.0f64;
    for yf in &primal.y {
        for &v in &yf.values {
            max_y = max_y.max(v.abs());
        }
    }
    for zf in &primal.z {
        for n in 0..zf.node_count() {
            let norm: f64 = zf.get(n).iter().map(|v| v * v).sum::<f64>().sqrt();
            max_z = max_z.max(norm);
        }
    }
    let mut gaps = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        // nested alpha grids: halving h keeps every coarser point
        let cfg = GridConfig::uniform(6.0, h, 20, 2);
        let r = game_dpp_value(&p, &lat, 0, &cfg).unwrap();
        let bound = 2.0 * g.c_rep * h * (1.0 + max_y + max_z) * lat.horizon();
        assert!(
            r.gap_to_primal <= bound,
            "h={h}: gap {} above envelope {bound}",
            r.gap_to_primal
        );
        gaps.push(r.gap_to_primal);
    }
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    budget("criterion 4", start, 60.0);
    report(
        &format!("criterion 4 (uniform-grid degradation, gaps {gaps:?})"),
        monotone,
    );
}

#[test]
fn criterion_5_mixed_game_equals_reflected() {
    let start = Instant::now();
    let lat = Lattice::build(1.0, 16, 1).unwrap();
    let g = Generator::mu_abs_z(0.5, 1).unwrap();
    let cfg = GridConfig::adaptive(3.0, 1.0, 2, 2);
    let inactive: Vec<NodeField> = (0..=16)
        .map(|k| NodeField::constant(&lat, k, -10.0))
        .collect();
    let deterministic: Vec<NodeField> = (0..=16)
        .map(|k| NodeField::constant(&lat, k, 1.0 - lat.time(k)))
        .collect();
    let put: Vec<NodeField> = (0..=16)
        .map(|k| NodeField::from_fn(&lat, k, |b| (1.0 - b[0]).max(0.0)))
        .collect();
    let put_xi = NodeField::from_fn(&lat, 16, |b| (1.0 - b[0]).max(0.0));
    let cases = vec![
        (bt(&lat), inactive),
        (put_xi.clone(), deterministic),
        (put_xi, put),
    ];
    let mut max_gap = 0.0f64;
    let mut max_skorokhod = 0.0f64;
    let mut dominance = true;
    for (xi, obstacle) in cases {
        let p = BsdeProblem::reflected(g.clone(), xi, obstacle).unwrap();
        let primal = solve_rbsde(&p, &lat, 0).unwrap();
        let r = mixed_game_dpp(&p, &lat, 0, &cfg).unwrap();
        max_gap = max_gap.max(r.gap_to_primal);
        let obs = p.obstacle.as_ref().unwrap();
        for sol in [&primal, &r.solution] {
            let mut skorokhod = 0.0;
            for (yf, af) in sol.y.iter().zip(&sol.a) {
                for n in 0..yf.values.len() {
                    let slack = yf.values[n] - obs[yf.level].values[n];
                    dominance &= slack >= 0.0;
                    skorokhod += af.values[n] * slack;
                }
            }
            max_skorokhod = max_skorokhod.max(skorokhod.abs());
        }
    }
    budget("criterion 5", start, 30.0);
    report(
        &format!(
            "criterion 5 (mixed game = reflected, gap {max_gap:.2e}, skorokhod {max_skorokhod:.1e})"
        ),
        max_gap <= TOL && max_skorokhod == 0.0 && dominance,
    );
}

#[test]
fn criterion_6_concave_cross_check() {
    let start = Instant::now();
    let lat = Lattice::build(1.0, 16, 1).unwrap();
    let g = Generator::neg_mu_abs_z(1.0, 1).unwrap();
    let p = BsdeProblem::plain(g.clone(), bt(&lat));
    let primal = solve_bsde(&p, &lat, 0).unwrap();
    let closed_form_err = (primal.root_value() + 1.0).abs();
    let sup = SupGrid {
        lo: vec![-4.0, -4.0],
        hi: vec![4.0, 4.0],
        step: 0.1,
    };
    let dual = build_dual(&g, 0.0, &[0.0, -1.5], &[0.0, 1.5], &[1.0, 0.05], &sup).unwrap();
    let inf = concave_inf_value(&p, &lat, &dual, 0).unwrap();
    let mut max_z = 0.0f64;
    for zf in &primal.z {
        for n in 0..zf.node_count() {
            max_z = max_z.max(zf.get(n)[0].abs());
        }
    }
    let inf_gap = inf.max_abs_gap(&primal);
    let inf_bound = dual.max_step() * (1.0 + max_z) * lat.horizon();
    let cfg = GridConfig::adaptive(3.0, 1.0, 2, 2);
    let game_gap = game_dpp_value(&p, &lat, 0, &cfg).unwrap().gap_to_primal;
    budget("criterion 6", start, 10.0);
    report(
        &format!(
            "criterion 6 (concave cross-check, closed form {closed_form_err:.2e}, \
             inf gap {inf_gap:.2e} <= {inf_bound:.2e}, game gap {game_gap:.2e})"
        ),
        closed_form_err <= TOL && inf_gap <= inf_bound && game_gap <= TOL,
    );
}

#[test]
fn criterion_7_axioms_and_domination() {
    let start = Instant::now();
    let lat = Lattice::build(1.0, 16, 1).unwrap();
    let gens = vec![
        Generator::zero(1),
        Generator::mu_norm(1.0, 1).unwrap(),
        Generator::mu_abs_z(0.5, 1).unwrap(),
    ];
    let mut all_pass = true;
    for g in &gens {
        let op = EvaluationOperator::new(g.clone(), lat.clone()).unwrap();
        let ax = check_axioms(&op, 50, 2024, TOL).unwrap();
        let dom = check_domination(&op, g.c_l1, 50, 2024, TOL).unwrap();
        all_pass &= ax.pass && dom.pass;
    }
    // dual representation coincides with the evaluation on sub-horizons
    let op = EvaluationOperator::new(Generator::mu_abs_z(0.5, 1).unwrap(), lat.clone()).unwrap();
    let cfg = GridConfig::adaptive(3.0, 1.0, 2, 2);
    let mut dual_gap = 0.0f64;
    for (s, t) in [(2usize, 10usize), (0, 16), (5, 9)] {
        let x = NodeField::from_fn(&lat, t, |b| b[0] * b[0]);
        let r = op.dual_representation(s, &x, &cfg).unwrap();
        let e = op.evaluate(s, &x).unwrap();
        dual_gap = dual_gap.max(r.gap_to_primal);
        for (a, b) in r.solution.y_at(s).values.iter().zip(&e.values) {
            dual_gap = dual_gap.max((a - b).abs());
        }
    }
    budget("criterion 7", start, 30.0);
    report(
        &format!("criterion 7 (axioms + domination, dual gap {dual_gap:.2e})"),
        all_pass && dual_gap <= TOL,
    );
}

#[test]
fn criterion_8_guards() {
    let start = Instant::now();
    // positivity boundary: margin = c (sqrt(dt) + dt) with dt = 1/4
    let lat = Lattice::build(1.0, 4, 1).unwrap();
    let ctrl = ControlPolicy::random(&lat, 0, 4, 1.0, 5);
    let boundary = 1.0 / (0.5 + 0.25);
    let below = bsde_lab::bsde::gamma_path(&ctrl, &lat, 0, boundary * (1.0 - 1e-9));
    let above = bsde_lab::bsde::gamma_path(&ctrl, &lat, 0, boundary * (1.0 + 1e-9));
    let guard_ok = below.is_ok()
        && matches!(above, Err(Error::PositivityViolation { margin }) if margin >= 1.0);
    // budget guard on exhaustive enumeration
    let big = GridConfig::uniform(2.0, 0.25, 4, 2);
    let p = BsdeProblem::plain(Generator::mu_abs_z(0.5, 1).unwrap(), bt(&lat));
    let budget_err = matches!(
        open_loop_bruteforce(&p, &lat, &big, 0),
        Err(Error::BudgetExceeded { .. })
    );
    // the same guard surfaces as exit code 3 through the CLI
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("over_budget.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "lattice": {"horizon": 1.0, "steps": 3, "dim": 1},
            "generator": {"name": "mu_abs_z", "mu": 0.5},
            "grids": {"alpha_radius": 2.0, "alpha_step": 0.25,
                      "beta_resolution": 4, "adaptive": false}
        }"#,
    )
    .unwrap();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_bsde-lab"))
        .args(["game", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    let exit3 = status.code() == Some(3);
    budget("criterion 8", start, 30.0);
    report(
        &format!("criterion 8 (guards, positivity {guard_ok}, budget {budget_err}, exit3 {exit3})"),
        guard_ok && budget_err && exit3,
    );
}
