//! Recombining random-walk approximation of a d-dimensional Brownian motion.
//!
//! Each of the `d` coordinates moves by `±sqrt(dt)` per step with probability
//! 1/2, independently across coordinates and levels. Level `k` therefore has
//! `(k+1)^d` nodes, indexed lexicographically by per-coordinate up-counts
//! (coordinate 0 most significant). All operators here are exact: conditional
//! expectations are finite averages, not Monte Carlo estimates.

use crate::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone)]
pub struct Lattice {
    horizon: f64,
    steps: usize,
    dim: usize,
    dt: f64,
    sqrt_dt: f64,
}

/// Scalar adapted process sampled on one lattice level.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub level: usize,
    pub values: Vec<f64>,
}

/// Tuple-valued adapted process (z-fields, control coordinates) on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleField {
    pub level: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Lattice {
    pub fn build(horizon: f64, steps: usize, dim: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidLattice { horizon, steps });
        }
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        let dt = horizon / steps as f64;
        Ok(Self {
            horizon,
            steps,
            dim,
            dt,
            sqrt_dt: dt.sqrt(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Number of sign combinations per transition, 2^d.
    pub fn branches(&self) -> usize {
        1 << self.dim
    }

    pub fn node_count(&self, level: usize) -> usize {
        (level + 1).pow(self.dim as u32)
    }

    /// Per-coordinate up-counts of a node (only the first `dim` entries are
    /// meaningful).
    pub fn up_counts(&self, level: usize, node: usize) -> [usize; MAX_DIM] {
        let base = level + 1;
        let mut u = [0usize; MAX_DIM];
        let mut rest = node;
        for i in (0..self.dim).rev() {
            u[i] = rest % base;
            rest /= base;
        }
        debug_assert_eq!(rest, 0, "node index out of range");
        u
    }

    pub fn node_index(&self, level: usize, ups: &[usize]) -> usize {
        let base = level + 1;
        ups[..self.dim].iter().fold(0, |acc, &c| acc * base + c)
    }

    /// Successor node at level+1 under the sign combination `mask`
    /// (bit i set means coordinate i moves up).
    pub fn successor(&self, level: usize, node: usize, mask: usize) -> usize {
        let u = self.up_counts(level, node);
        let base = level + 2;
        let mut s = 0usize;
        for (i, &ui) in u.iter().enumerate().take(self.dim) {
            s = s * base + ui + ((mask >> i) & 1);
        }
        s
    }

    pub fn increment_sign(mask: usize, coord: usize) -> f64 {
        if (mask >> coord) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Brownian coordinates at a node: (2*u_i - level) * sqrt(dt).
    pub fn brownian(&self, level: usize, node: usize) -> [f64; MAX_DIM] {
        let u = self.up_counts(level, node);
        let mut b = [0.0; MAX_DIM];
        for i in 0..self.dim {
            b[i] = (2.0 * u[i] as f64 - level as f64) * self.sqrt_dt;
        }
        b
    }

    /// Number of paths from the root to the node.
    pub fn path_multiplicity(&self, level: usize, node: usize) -> f64 {
        let u = self.up_counts(level, node);
        let mut m = 1.0;
        for i in 0..self.dim {
            m *= binomial(level, u[i]);
        }
        m
    }

    /// Unconditional probability of occupying the node at its level.
    pub fn node_probability(&self, level: usize, node: usize) -> f64 {
        self.path_multiplicity(level, node) * 0.5f64.powi((self.dim * level) as i32)
    }

    /// Worst-case drop of a Gamma factor for a unit-ball control:
    /// c_rep * (sqrt(dt*d) + dt). Factors stay positive iff this is < 1.
    pub fn positivity_margin(&self, c_rep: f64) -> f64 {
        c_rep * ((self.dt * self.dim as f64).sqrt() + self.dt)
    }

    pub fn check_positivity(&self, c_rep: f64) -> Result<()> {
        let margin = self.positivity_margin(c_rep);
        if margin >= 1.0 {
            Err(Error::PositivityViolation { margin })
        } else {
            Ok(())
        }
    }

    /// Step bound under which one backward step of a c_l1-Lipschitz driver is
    /// monotone in the successor values.
    pub fn comparison_bound_ok(&self, c_l1: f64) -> bool {
        c_l1 * ((self.dt * self.dim as f64).sqrt() + self.dt) <= 1.0
    }

    /// Conditional expectation E[f | F_k]: uniform average of the 2^d
    /// successor values.
    pub fn cond_expect(&self, f: &NodeField) -> Result<NodeField> {
        if f.level == 0 || f.level > self.steps {
            return Err(Error::LevelMismatch {
                expected: 1,
                found: f.level,
            });
        }
        let level = f.level - 1;
        let inv = 1.0 / self.branches() as f64;
        let values = (0..self.node_count(level))
            .map(|n| {
                let mut s = 0.0;
                for mask in 0..self.branches() {
                    s += f.values[self.successor(level, n, mask)];
                }
                s * inv
            })
            .collect();
        Ok(NodeField { level, values })
    }

    /// Discrete martingale-representation coefficient:
    /// z_i = E[f * dB_i | F_k] / dt. In d=1 this is (f_up - f_down)/(2 sqrt(dt)).
    pub fn extract_z(&self, f: &NodeField) -> Result<TupleField> {
        if f.level == 0 || f.level > self.steps {
            return Err(Error::LevelMismatch {
                expected: 1,
                found: f.level,
            });
        }
        let level = f.level - 1;
        let scale = 1.0 / (self.branches() as f64 * self.sqrt_dt);
        let mut values = vec![0.0; self.node_count(level) * self.dim];
        for n in 0..self.node_count(level) {
            for mask in 0..self.branches() {
                let fv = f.values[self.successor(level, n, mask)];
                for i in 0..self.dim {
                    values[n * self.dim + i] += Self::increment_sign(mask, i) * fv * scale;
                }
            }
        }
        Ok(TupleField {
            level,
            width: self.dim,
            values,
        })
    }

    /// Probability-weighted mean of a level field.
    pub fn level_mean(&self, f: &NodeField) -> f64 {
        f.values
            .iter()
            .enumerate()
            .map(|(n, v)| self.node_probability(f.level, n) * v)
            .sum()
    }

    /// True when the level-`lo_level` node can be reached from the
    /// level-`hi_level` node going forward in time (hi_level <= lo_level).
    pub fn is_descendant(
        &self,
        hi_level: usize,
        hi_node: usize,
        lo_level: usize,
        lo_node: usize,
    ) -> bool {
        debug_assert!(hi_level <= lo_level);
        let span = lo_level - hi_level;
        let a = self.up_counts(hi_level, hi_node);
        let b = self.up_counts(lo_level, lo_node);
        (0..self.dim).all(|i| b[i] >= a[i] && b[i] - a[i] <= span)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}

impl NodeField {
    pub fn constant(lat: &Lattice, level: usize, value: f64) -> Self {
        NodeField {
            level,
            values: vec![value; lat.node_count(level)],
        }
    }

    /// Build a field from a function of the Brownian coordinates.
    pub fn from_fn(lat: &Lattice, level: usize, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..lat.node_count(level))
            .map(|n| {
                let b = lat.brownian(level, n);
                f(&b[..lat.dim()])
            })
            .collect();
        NodeField { level, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl TupleField {
    pub fn zeros(lat: &Lattice, level: usize, width: usize) -> Self {
        TupleField {
            level,
            width,
            values: vec![0.0; lat.node_count(level) * width],
        }
    }

    pub fn get(&self, node: usize) -> &[f64] {
        &self.values[node * self.width..(node + 1) * self.width]
    }

    pub fn get_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.width..(node + 1) * self.width]
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.width
    }
}
