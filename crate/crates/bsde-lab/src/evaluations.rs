//! Driver-induced dynamic evaluations on the lattice: the two-time operator
//! E_{s,t}[X], its axioms (monotonicity, identity on its own level, time
//! consistency, locality on descendant cones), domination by the norm driver,
//! and the game form of the same value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::affine_rep::GridConfig;
use crate::bsde::{solve_bsde, BsdeProblem};
use crate::game::{game_dpp_value, GameResult};
use crate::generators::Generator;
use crate::lattice::{Lattice, NodeField};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EvaluationOperator {
    pub generator: Generator,
    pub lattice: Lattice,
}

impl EvaluationOperator {
    pub fn new(generator: Generator, lattice: Lattice) -> Result<Self> {
        if generator.dim != lattice.dim() {
            return Err(Error::InvalidParameter(format!(
                "driver dimension {} does not match lattice dimension {}",
                generator.dim,
                lattice.dim()
            )));
        }
        Ok(EvaluationOperator { generator, lattice })
    }

    /// E_{s,t}[X]: solve the BSDE with terminal field X down to level s.
    pub fn evaluate(&self, s: usize, x: &NodeField) -> Result<NodeField> {
        let p = BsdeProblem::plain(self.generator.clone(), x.clone());
        let sol = solve_bsde(&p, &self.lattice, s)?;
        Ok(sol.y_at(s).clone())
    }

    /// Same value through the sup-inf game on a sub-horizon; the
    /// `gap_to_primal` field measures the distance to `evaluate`.
    pub fn dual_representation(
        &self,
        s: usize,
        x: &NodeField,
        cfg: &GridConfig,
    ) -> Result<GameResult> {
        let p = BsdeProblem::plain(self.generator.clone(), x.clone());
        game_dpp_value(&p, &self.lattice, s, cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub samples: usize,
    /// Max of E[X2] - E[X1] over nodes with X2 <= X1 pointwise (<= 0 means
    /// monotone up to sign).
    pub monotonicity_gap: f64,
    /// Max |E_{t,t}[X] - X|.
    pub identity_gap: f64,
    /// Max |E_{s,t} - E_{s,r} . E_{r,t}| over sampled (s, r, t).
    pub recursivity_gap: f64,
    /// Max value change at a node when X is perturbed outside its
    /// descendant cone.
    pub locality_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub mu: f64,
    pub samples: usize,
    /// Max of (E[X1] - E[X2]) - E^{g_mu}[X1 - X2] over nodes and pairs.
    pub difference_violation: f64,
    /// Max violation of the two-sided bound
    /// E^{f0 - g_mu}[X] <= E[X] <= E^{f0 + g_mu}[X], f0(t) = f(t, 0, 0).
    pub sandwich_violation: f64,
    pub pass: bool,
}

fn random_field(lat: &Lattice, level: usize, radius: f64, rng: &mut ChaCha8Rng) -> NodeField {
    NodeField {
        level,
        values: (0..lat.node_count(level))
            .map(|_| rng.gen_range(-radius..=radius))
            .collect(),
    }
}

fn max_node_gap(a: &NodeField, b: &NodeField) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn require_comparison(lat: &Lattice, c_l1: f64) -> Result<()> {
    if !lat.comparison_bound_ok(c_l1) {
        return Err(Error::InvalidParameter(format!(
            "time step too coarse for one-step comparison at Lipschitz constant {c_l1}"
        )));
    }
    Ok(())
}

/// Sample the four evaluation axioms on random terminal fields. All but
/// monotonicity hold exactly on the lattice; monotonicity needs the one-step
/// comparison bound on the driver's Lipschitz constant.
pub fn check_axioms(
    op: &EvaluationOperator,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<AxiomReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("check_axioms needs samples >= 1".into()));
    }
    let lat = &op.lattice;
    require_comparison(lat, op.generator.c_l1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lat.steps();
    let mut mono = f64::NEG_INFINITY;
    let mut ident = 0.0f64;
    let mut recur = 0.0f64;
    let mut local = 0.0f64;
    for _ in 0..samples {
        let t = rng.gen_range(1..=n);
        let s = rng.gen_range(0..t);
        let x1 = random_field(lat, t, 2.0, &mut rng);
        // A1: shrink pointwise, values must not increase
        let x2 = NodeField {
            level: t,
            values: x1
                .values
                .iter()
                .map(|v| v - rng.gen_range(0.0..=1.0))
                .collect(),
        };
        let e1 = op.evaluate(s, &x1)?;
        let e2 = op.evaluate(s, &x2)?;
        for (a, b) in e1.values.iter().zip(&e2.values) {
            mono = mono.max(b - a);
        }
        // A2: evaluation on its own level is the identity
        ident = ident.max(max_node_gap(&op.evaluate(t, &x1)?, &x1));
        // A3: two-stage evaluation through any middle level agrees
        let r = rng.gen_range(s..=t);
        let stepped = op.evaluate(s, &op.evaluate(r, &x1)?)?;
        recur = recur.max(max_node_gap(&stepped, &e1));
        // A4: the value at a node ignores X outside the node's cone
        let a_node = rng.gen_range(0..lat.node_count(s));
        let x3 = NodeField {
            level: t,
            values: x1
                .values
                .iter()
                .enumerate()
                .map(|(m, &v)| {
                    if lat.is_descendant(s, a_node, t, m) {
                        v
                    } else {
                        rng.gen_range(-2.0..=2.0)
                    }
                })
                .collect(),
        };
        let e3 = op.evaluate(s, &x3)?;
        local = local.max((e3.values[a_node] - e1.values[a_node]).abs());
    }
    let pass = mono <= tol && ident <= tol && recur <= tol && local <= tol;
    Ok(AxiomReport {
        samples,
        monotonicity_gap: mono,
        identity_gap: ident,
        recursivity_gap: recur,
        locality_gap: local,
        pass,
    })
}

/// Sampled check that the evaluation is dominated by the norm driver
/// g_mu(y, z) = mu (|y| + |z|): differences of evaluations are bounded by the
/// g_mu evaluation of the difference, and the operator itself is sandwiched
/// between the f(t,0,0)-shifted g_mu evaluations.
pub fn check_domination(
    op: &EvaluationOperator,
    mu: f64,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<DominationReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter(
            "check_domination needs samples >= 1".into(),
        ));
    }
    let g = &op.generator;
    if mu < g.c_l1 {
        return Err(Error::InvalidParameter(format!(
            "domination constant {mu} below the driver's Lipschitz constant {}",
            g.c_l1
        )));
    }
    let lat = &op.lattice;
    require_comparison(lat, mu)?;
    let dom = EvaluationOperator::new(Generator::mu_norm(mu, g.dim)?, lat.clone())?;
    let base = g.clone();
    let shifted = |sign: f64| {
        let inner = base.clone();
        Generator::custom(
            "shifted_mu_norm",
            move |t, y, z| {
                inner.eval(t, 0.0, &vec![0.0; inner.dim])
                    + sign * mu * (y.abs() + crate::generators::norm2(z))
            },
            mu,
            g.dim,
            sign < 0.0,
        )
    };
    let upper = EvaluationOperator::new(shifted(1.0), lat.clone())?;
    let lower = EvaluationOperator::new(shifted(-1.0), lat.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = lat.steps();
    let mut diff_viol = f64::NEG_INFINITY;
    let mut sandwich = f64::NEG_INFINITY;
    for _ in 0..samples {
        let t = rng.gen_range(1..=n);
        let s = rng.gen_range(0..t);
        let x1 = random_field(lat, t, 2.0, &mut rng);
        let x2 = random_field(lat, t, 2.0, &mut rng);
        let e1 = op.evaluate(s, &x1)?;
        let e2 = op.evaluate(s, &x2)?;
        let diff = NodeField {
            level: t,
            values: x1.values.iter().zip(&x2.values).map(|(a, b)| a - b).collect(),
        };
        let bound = dom.evaluate(s, &diff)?;
        for ((a, b), c) in e1.values.iter().zip(&e2.values).zip(&bound.values) {
            diff_viol = diff_viol.max((a - b) - c);
        }
        let hi = upper.evaluate(s, &x1)?;
        let lo = lower.evaluate(s, &x1)?;
        for ((e, h), l) in e1.values.iter().zip(&hi.values).zip(&lo.values) {
            sandwich = sandwich.max(e - h).max(l - e);
        }
    }
    let pass = diff_viol <= tol && sandwich <= tol;
    Ok(DominationReport {
        mu,
        samples,
        difference_violation: diff_viol,
        sandwich_violation: sandwich,
        pass,
    })
}
