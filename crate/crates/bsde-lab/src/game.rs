//! Sup-inf game values: dynamic programming over control grids, brute-force
//! open-loop enumeration on tiny instances, and the concave
//! inf-representation value.

use crate::affine_rep::{
    build_alpha_grid, build_beta_grid, dot, AlphaGrid, BetaGrid, BracketScan, FenchelDual,
    GridConfig,
};
use crate::bsde::{
    dual_expectation, solve_bsde, BsdeProblem, ControlPolicy, SolutionField,
};
use crate::lattice::{Lattice, NodeField, TupleField};
use crate::par;
use crate::{Error, Result};

pub const BRUTE_FORCE_BUDGET: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct GameResult {
    pub solution: SolutionField,
    /// Max-node |y_game - y_primal| over all solved levels.
    pub gap_to_primal: f64,
    /// First maximizing alpha / minimizing beta at the root node.
    pub root_argmax: Vec<f64>,
    pub root_argmin: Vec<f64>,
}

pub(crate) struct GameGrids {
    agrid: AlphaGrid,
    bgrid: BetaGrid,
}

pub(crate) fn prepare(p: &BsdeProblem, lat: &Lattice, cfg: &GridConfig) -> Result<GameGrids> {
    let w = lat.dim() + 1;
    lat.check_positivity(p.generator.c_rep)?;
    Ok(GameGrids {
        agrid: build_alpha_grid(cfg, w)?,
        bgrid: build_beta_grid(cfg.beta_resolution, w)?,
    })
}

pub(crate) fn dpp_backward(
    p: &BsdeProblem,
    lat: &Lattice,
    start: usize,
    cfg: &GridConfig,
    grids: &GameGrids,
    infsup: bool,
) -> Result<(Vec<NodeField>, Vec<TupleField>, Vec<NodeField>, Vec<f64>, Vec<f64>)> {
    let end = p.terminal.level;
    if start > end || end > lat.steps() {
        return Err(Error::LevelOrder {
            start,
            end,
            steps: lat.steps(),
        });
    }
    let g = &p.generator;
    let w = lat.dim() + 1;
    let dt = lat.dt();
    let scan = BracketScan {
        agrid: &grids.agrid,
        bgrid: &grids.bgrid,
        adaptive: cfg.adaptive,
        c: g.c_rep,
    };
    let mut y_rev = vec![p.terminal.clone()];
    let mut z_rev: Vec<TupleField> = Vec::new();
    let mut a_rev: Vec<NodeField> = vec![NodeField::constant(lat, end, 0.0)];
    let mut root_argmax = vec![0.0; w];
    let mut root_argmin = vec![0.0; w];
    for k in (start..end).rev() {
        let t = lat.time(k);
        let ytilde = lat.cond_expect(y_rev.last().unwrap())?;
        let zk = lat.extract_z(y_rev.last().unwrap())?;
        let f_alpha: Vec<f64> = (0..grids.agrid.len())
            .map(|i| {
                let a = grids.agrid.point(i);
                g.eval(t, a[0], &a[1..])
            })
            .collect();
        let obstacle = p.obstacle.as_ref().map(|obs| &obs[k]);
        let pairs = par::map_indexed(lat.node_count(k), |n| {
            let mut x = vec![0.0; w];
            x[0] = ytilde.values[n];
            x[1..].copy_from_slice(zk.get(n));
            let fx = g.eval(t, x[0], &x[1..]);
            let bracket = if infsup {
                scan.min_max(&f_alpha, fx, &x)
            } else {
                scan.max_min(&f_alpha, fx, &x)
            };
            let unc = ytilde.values[n] + dt * bracket;
            match obstacle {
                Some(s) => {
                    let y = unc.max(s.values[n]);
                    (y, y - unc)
                }
                None => (unc, 0.0),
            }
        });
        if k == start && !infsup {
            let mut x = vec![0.0; w];
            x[0] = ytilde.values[0];
            x[1..].copy_from_slice(zk.get(0));
            let fx = g.eval(t, x[0], &x[1..]);
            let (_, amax, bmin) = scan.max_min_with_args(&f_alpha, fx, &x);
            root_argmax = amax;
            root_argmin = bmin;
        }
        let (values, incr): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        z_rev.push(zk);
        y_rev.push(NodeField { level: k, values });
        a_rev.push(NodeField {
            level: k,
            values: incr,
        });
    }
    y_rev.reverse();
    z_rev.reverse();
    a_rev.reverse();
    Ok((y_rev, z_rev, a_rev, root_argmax, root_argmin))
}

/// Sup-inf value by backward dynamic programming with
/// nodewise grid optimization. With adaptive grids the saddle lies on the
/// grid and the value coincides with the primal BSDE solution.
pub fn game_dpp_value(
    p: &BsdeProblem,
    lat: &Lattice,
    start: usize,
    cfg: &GridConfig,
) -> Result<GameResult> {
    if p.obstacle.is_some() {
        return Err(Error::InvalidParameter(
            "game_dpp_value takes a plain problem; use mixed_game_dpp".into(),
        ));
    }
    let grids = prepare(p, lat, cfg)?;
    let (y, z, a, root_argmax, root_argmin) = dpp_backward(p, lat, start, cfg, &grids, false)?;
    let solution = SolutionField {
        start_level: start,
        y,
        z,
        a,
    };
    let primal = solve_bsde(p, lat, start)?;
    let gap_to_primal = solution.max_abs_gap(&primal);
    Ok(GameResult {
        solution,
        gap_to_primal,
        root_argmax,
        root_argmin,
    })
}

/// Diagnostic inf-sup value; not expected to equal the sup-inf value in
/// general, but callers can report the gap between the two.
pub fn infsup_dpp_value(
    p: &BsdeProblem,
    lat: &Lattice,
    start: usize,
    cfg: &GridConfig,
) -> Result<SolutionField> {
    let grids = prepare(p, lat, cfg)?;
    let (y, z, a, _, _) = dpp_backward(p, lat, start, cfg, &grids, true)?;
    Ok(SolutionField {
        start_level: start,
        y,
        z,
        a,
    })
}

fn increment_odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Exact open-loop value on tiny instances: max over all alpha policies of
/// min over all beta policies of the dual expectation, evaluated at the
/// lexicographically first node of level `t_level`. Refuses combinatorial
/// budgets above `BRUTE_FORCE_BUDGET`.
pub fn open_loop_bruteforce(
    p: &BsdeProblem,
    lat: &Lattice,
    cfg: &GridConfig,
    t_level: usize,
) -> Result<f64> {
    let end = p.terminal.level;
    if t_level > end || end > lat.steps() {
        return Err(Error::LevelOrder {
            start: t_level,
            end,
            steps: lat.steps(),
        });
    }
    let w = lat.dim() + 1;
    let agrid = build_alpha_grid(cfg, w)?;
    let bgrid = build_beta_grid(cfg.beta_resolution, w)?;
    let slots: Vec<(usize, usize)> = (t_level..end)
        .flat_map(|k| (0..lat.node_count(k)).map(move |n| (k, n)))
        .collect();
    let count = ((agrid.len() * bgrid.len()) as f64).powi(slots.len() as i32);
    if count > BRUTE_FORCE_BUDGET {
        return Err(Error::BudgetExceeded {
            count,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    lat.check_positivity(p.generator.c_rep)?;
    let assemble = |digits: &[usize], grid_point: &dyn Fn(usize) -> Vec<f64>| -> Vec<TupleField> {
        let mut fields: Vec<TupleField> = (t_level..end)
            .map(|k| TupleField::zeros(lat, k, w))
            .collect();
        for (slot, &(k, n)) in slots.iter().enumerate() {
            fields[k - t_level]
                .get_mut(n)
                .copy_from_slice(&grid_point(digits[slot]));
        }
        fields
    };
    let mut best = f64::NEG_INFINITY;
    let mut a_digits = vec![0usize; slots.len()];
    loop {
        let alpha = assemble(&a_digits, &|i| agrid.point(i).to_vec());
        let mut worst = f64::INFINITY;
        let mut b_digits = vec![0usize; slots.len()];
        loop {
            let beta = assemble(&b_digits, &|i| bgrid.point(i).to_vec());
            let ctrl = ControlPolicy {
                start_level: t_level,
                alpha: alpha.clone(),
                beta,
            };
            let v = dual_expectation(&ctrl, p, lat, t_level)?.values[0];
            if v < worst {
                worst = v;
            }
            if slots.is_empty() || !increment_odometer(&mut b_digits, bgrid.len()) {
                break;
            }
        }
        if worst > best {
            best = worst;
        }
        if slots.is_empty() || !increment_odometer(&mut a_digits, agrid.len()) {
            break;
        }
    }
    Ok(best)
}

/// Concave inf-representation value (section-1 parametrization: the dual
/// coefficients enter unscaled). Backward DPP with a pure min over the
/// stored conjugate domain.
pub fn concave_inf_value(
    p: &BsdeProblem,
    lat: &Lattice,
    dual: &FenchelDual,
    start: usize,
) -> Result<SolutionField> {
    if !p.generator.concave {
        return Err(Error::InvalidParameter(format!(
            "concave_inf_value needs a concave driver, got {}",
            p.generator.name
        )));
    }
    if dual.is_empty() {
        return Err(Error::EmptyDualDomain);
    }
    let end = p.terminal.level;
    if start > end || end > lat.steps() {
        return Err(Error::LevelOrder {
            start,
            end,
            steps: lat.steps(),
        });
    }
    let w = lat.dim() + 1;
    let dt = lat.dt();
    let mut y_rev = vec![p.terminal.clone()];
    let mut z_rev: Vec<TupleField> = Vec::new();
    for k in (start..end).rev() {
        let ytilde = lat.cond_expect(y_rev.last().unwrap())?;
        let zk = lat.extract_z(y_rev.last().unwrap())?;
        let values = par::map_indexed(lat.node_count(k), |n| {
            let mut x = vec![0.0; w];
            x[0] = ytilde.values[n];
            x[1..].copy_from_slice(zk.get(n));
            let mut m = f64::INFINITY;
            for j in 0..dual.len() {
                let v = dual.value(j) + dot(dual.point(j), &x);
                if v < m {
                    m = v;
                }
            }
            ytilde.values[n] + dt * m
        });
        z_rev.push(zk);
        y_rev.push(NodeField { level: k, values });
    }
    y_rev.reverse();
    z_rev.reverse();
    let a = (start..=end)
        .map(|k| NodeField::constant(lat, k, 0.0))
        .collect();
    Ok(SolutionField {
        start_level: start,
        y: y_rev,
        z: z_rev,
        a,
    })
}
