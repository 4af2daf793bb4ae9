//! Reflected BSDEs (solutions kept above an obstacle by a minimal push),
//! optimal stopping under linear weights, and the mixed control/stopping
//! game.

use crate::affine_rep::{big_f, GridConfig};
use crate::bsde::{check_range, gamma_factor, BsdeProblem, ControlPolicy, SolutionField};
use crate::game::{dpp_backward, prepare, GameResult};
use crate::lattice::{Lattice, NodeField, TupleField};
use crate::par;
use crate::{Error, Result};

fn obstacle_of<'a>(p: &'a BsdeProblem, what: &str) -> Result<&'a [NodeField]> {
    p.obstacle.as_deref().ok_or_else(|| {
        Error::InvalidParameter(format!("{what} needs a reflected problem with an obstacle"))
    })
}

/// Reflected backward recursion: the unconstrained step is clipped to the
/// obstacle and the push is recorded as the increment field `a`. The push is
/// nonzero only at nodes where the solution sits exactly on the obstacle, so
/// the discrete Skorokhod condition holds with no residual.
pub fn solve_rbsde(p: &BsdeProblem, lat: &Lattice, start: usize) -> Result<SolutionField> {
    let obstacle = obstacle_of(p, "solve_rbsde")?;
    let end = p.terminal.level;
    check_range(lat, start, end, p.terminal.len())?;
    let g = &p.generator;
    let dt = lat.dt();
    let mut y_rev = vec![p.terminal.clone()];
    let mut z_rev: Vec<TupleField> = Vec::new();
    let mut a_rev = vec![NodeField::constant(lat, end, 0.0)];
    for k in (start..end).rev() {
        let t = lat.time(k);
        let ytilde = lat.cond_expect(y_rev.last().unwrap())?;
        let zk = lat.extract_z(y_rev.last().unwrap())?;
        let s = &obstacle[k];
        let pairs = par::map_indexed(lat.node_count(k), |n| {
            let yt = ytilde.values[n];
            let unc = yt + g.eval(t, yt, zk.get(n)) * dt;
            let y = unc.max(s.values[n]);
            (y, y - unc)
        });
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
    Ok(SolutionField {
        start_level: start,
        y: y_rev,
        z: z_rev,
        a: a_rev,
    })
}

/// Node-feedback stopping rule for levels start..=end. The final level is
/// always a stop (the horizon pays the terminal condition).
#[derive(Debug, Clone)]
pub struct StoppingPolicy {
    pub start_level: usize,
    pub stop: Vec<Vec<bool>>,
}

impl StoppingPolicy {
    pub fn end_level(&self) -> usize {
        self.start_level + self.stop.len() - 1
    }

    pub fn stops_at(&self, level: usize, node: usize) -> bool {
        self.stop[level - self.start_level][node]
    }

    pub fn validate(&self) -> Result<()> {
        match self.stop.last() {
            Some(last) if last.iter().all(|&s| s) => Ok(()),
            _ => Err(Error::InvalidParameter(
                "stopping policy must stop everywhere at its final level".into(),
            )),
        }
    }
}

/// First hitting rule of the reflected solution: stop where y touches the
/// obstacle (ties stop).
pub fn hitting_policy(sol: &SolutionField, p: &BsdeProblem) -> Result<StoppingPolicy> {
    let obstacle = obstacle_of(p, "hitting_policy")?;
    let end = sol.terminal_level();
    let stop = sol
        .y
        .iter()
        .map(|yf| {
            if yf.level == end {
                vec![true; yf.values.len()]
            } else {
                yf.values
                    .iter()
                    .zip(&obstacle[yf.level].values)
                    .map(|(&y, &s)| y <= s)
                    .collect()
            }
        })
        .collect();
    Ok(StoppingPolicy {
        start_level: sol.start_level,
        stop,
    })
}

/// Linear-weighted payoff of a fixed stopping rule under a fixed control:
/// stopped nodes pay the obstacle (the terminal level pays xi), continuation
/// nodes take the Gamma-weighted adjoint step plus F dt.
pub fn evaluate_stopping_policy(
    policy: &StoppingPolicy,
    ctrl: &ControlPolicy,
    p: &BsdeProblem,
    lat: &Lattice,
    t_level: usize,
) -> Result<NodeField> {
    let obstacle = obstacle_of(p, "evaluate_stopping_policy")?;
    let end = p.terminal.level;
    check_range(lat, t_level, end, p.terminal.len())?;
    ctrl.validate()?;
    if policy.start_level > t_level || policy.end_level() < end {
        return Err(Error::LevelOrder {
            start: t_level,
            end,
            steps: policy.end_level(),
        });
    }
    policy.validate()?;
    let g = &p.generator;
    let c = g.c_rep;
    lat.check_positivity(c)?;
    let dt = lat.dt();
    let branch_w = 1.0 / lat.branches() as f64;
    let mut cur = p.terminal.clone();
    for k in (t_level..end).rev() {
        let t = lat.time(k);
        let alpha = ctrl.alpha_at(k);
        let beta = ctrl.beta_at(k);
        let values: Vec<f64> = (0..lat.node_count(k))
            .map(|n| {
                if policy.stops_at(k, n) {
                    return Ok(obstacle[k].values[n]);
                }
                let b = beta.get(n);
                let mut s = 0.0;
                for mask in 0..lat.branches() {
                    s += branch_w
                        * gamma_factor(lat, c, b, mask)
                        * cur.values[lat.successor(k, n, mask)];
                }
                Ok(s + big_f(g, t, b, alpha.get(n))? * dt)
            })
            .collect::<Result<_>>()?;
        cur = NodeField { level: k, values };
    }
    Ok(cur)
}

/// Best stopping value under a fixed control, with the rule that attains it:
/// backward max of obstacle against the weighted continuation, ties stopped.
pub fn linear_optimal_stopping(
    ctrl: &ControlPolicy,
    p: &BsdeProblem,
    lat: &Lattice,
    t_level: usize,
) -> Result<(NodeField, StoppingPolicy)> {
    let obstacle = obstacle_of(p, "linear_optimal_stopping")?;
    let end = p.terminal.level;
    check_range(lat, t_level, end, p.terminal.len())?;
    ctrl.validate()?;
    let g = &p.generator;
    let c = g.c_rep;
    lat.check_positivity(c)?;
    let dt = lat.dt();
    let branch_w = 1.0 / lat.branches() as f64;
    let mut cur = p.terminal.clone();
    let mut stop_rev = vec![vec![true; p.terminal.len()]];
    for k in (t_level..end).rev() {
        let t = lat.time(k);
        let alpha = ctrl.alpha_at(k);
        let beta = ctrl.beta_at(k);
        let pairs: Vec<(f64, bool)> = (0..lat.node_count(k))
            .map(|n| {
                let b = beta.get(n);
                let mut s = 0.0;
                for mask in 0..lat.branches() {
                    s += branch_w
                        * gamma_factor(lat, c, b, mask)
                        * cur.values[lat.successor(k, n, mask)];
                }
                let cont = s + big_f(g, t, b, alpha.get(n))? * dt;
                let payoff = obstacle[k].values[n];
                Ok(if payoff >= cont {
                    (payoff, true)
                } else {
                    (cont, false)
                })
            })
            .collect::<Result<_>>()?;
        let (values, stops): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        cur = NodeField { level: k, values };
        stop_rev.push(stops);
    }
    stop_rev.reverse();
    Ok((
        cur,
        StoppingPolicy {
            start_level: t_level,
            stop: stop_rev,
        },
    ))
}

/// Mixed game value: the control bracket of the plain game combined with the
/// stopping max against the obstacle at every node. With adaptive grids it
/// reproduces the reflected solution exactly.
pub fn mixed_game_dpp(
    p: &BsdeProblem,
    lat: &Lattice,
    start: usize,
    cfg: &GridConfig,
) -> Result<GameResult> {
    obstacle_of(p, "mixed_game_dpp")?;
    let grids = prepare(p, lat, cfg)?;
    let (y, z, a, root_argmax, root_argmin) = dpp_backward(p, lat, start, cfg, &grids, false)?;
    let solution = SolutionField {
        start_level: start,
        y,
        z,
        a,
    };
    let primal = solve_rbsde(p, lat, start)?;
    let gap_to_primal = solution.max_abs_gap(&primal);
    Ok(GameResult {
        solution,
        gap_to_primal,
        root_argmax,
        root_argmin,
    })
}
