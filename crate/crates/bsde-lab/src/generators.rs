//! Drivers f(t, y, z) with their Lipschitz constants.
//!
//! `c_l1` is the constant of the bound
//! |f(t,y1,z1) - f(t,y2,z2)| <= c_l1 (|y1-y2| + |z1-z2|),
//! with |.| Euclidean on the z part. The representation operations use the
//! Euclidean constant `c_rep`, defaulting to sqrt(2) * c_l1, which dominates
//! the l2-Lipschitz constant of any l1-Lipschitz driver.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type EvalFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Generator {
    pub name: String,
    eval: EvalFn,
    pub c_l1: f64,
    pub c_rep: f64,
    pub dim: usize,
    pub concave: bool,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("name", &self.name)
            .field("c_l1", &self.c_l1)
            .field("c_rep", &self.c_rep)
            .field("dim", &self.dim)
            .field("concave", &self.concave)
            .finish()
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Generator {
    fn build(name: &str, eval: EvalFn, c_l1: f64, dim: usize, concave: bool) -> Self {
        Generator {
            name: name.to_string(),
            eval,
            c_l1,
            c_rep: SQRT_2 * c_l1,
            dim,
            concave,
        }
    }

    pub fn eval(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        (self.eval)(t, y, z)
    }

    /// Override the Euclidean constant with a sharper (but still valid) one.
    pub fn with_c_rep(mut self, c_rep: f64) -> Result<Self> {
        if c_rep < self.c_l1 {
            return Err(Error::InvalidParameter(format!(
                "c_rep {c_rep} below c_l1 {}",
                self.c_l1
            )));
        }
        self.c_rep = c_rep;
        Ok(self)
    }

    pub fn zero(dim: usize) -> Self {
        Self::build("zero", Arc::new(|_, _, _| 0.0), 0.0, dim, true)
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        Self::build("constant", Arc::new(move |_, _, _| c), 0.0, dim, true)
    }

    /// f(t, y, z) = a + b1*y + <b2, z>.
    pub fn affine(a: f64, b1: f64, b2: Vec<f64>, dim: usize) -> Result<Self> {
        if b2.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "affine slope has {} z-coordinates, driver dimension is {dim}",
                b2.len()
            )));
        }
        let c_l1 = b1.abs().max(norm2(&b2));
        let slopes = b2.clone();
        Ok(Self::build(
            "affine",
            Arc::new(move |_, y, z| {
                a + b1 * y + slopes.iter().zip(z).map(|(b, zi)| b * zi).sum::<f64>()
            }),
            c_l1,
            dim,
            true,
        ))
    }

    /// g_mu(t, y, z) = mu * (|y| + |z|), the domination bound driver.
    pub fn mu_norm(mu: f64, dim: usize) -> Result<Self> {
        require_nonnegative(mu)?;
        Ok(Self::build(
            "mu_norm",
            Arc::new(move |_, y, z| mu * (y.abs() + norm2(z))),
            mu,
            dim,
            false,
        ))
    }

    /// f(t, y, z) = mu * |z|.
    pub fn mu_abs_z(mu: f64, dim: usize) -> Result<Self> {
        require_nonnegative(mu)?;
        Ok(Self::build(
            "mu_abs_z",
            Arc::new(move |_, _, z| mu * norm2(z)),
            mu,
            dim,
            false,
        ))
    }

    /// Concave driver f(t, y, z) = -mu * |z|.
    pub fn neg_mu_abs_z(mu: f64, dim: usize) -> Result<Self> {
        require_nonnegative(mu)?;
        Ok(Self::build(
            "neg_mu_abs_z",
            Arc::new(move |_, _, z| -mu * norm2(z)),
            mu,
            dim,
            true,
        ))
    }

    pub fn custom(
        name: &str,
        eval: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        c_l1: f64,
        dim: usize,
        concave: bool,
    ) -> Self {
        Self::build(name, Arc::new(eval), c_l1, dim, concave)
    }
}

fn require_nonnegative(mu: f64) -> Result<()> {
    if mu < 0.0 {
        Err(Error::InvalidParameter(format!("mu must be >= 0, got {mu}")))
    } else {
        Ok(())
    }
}

/// Sampling box over (y, z_1..z_d).
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn symmetric(radius: f64, dim: usize) -> Self {
        SampleBox {
            lo: vec![-radius; dim + 1],
            hi: vec![radius; dim + 1],
        }
    }
}

/// Max l1 difference quotient over sampled pairs. Alternates independent
/// pairs with small single-coordinate bumps so that directional slopes are
/// actually probed; deterministic given the seed.
pub fn estimate_lipschitz(
    g: &Generator,
    bounds: &SampleBox,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let w = g.dim + 1;
    if bounds.lo.len() != w || bounds.hi.len() != w {
        return Err(Error::InvalidParameter(format!(
            "sample box must have {w} coordinates"
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "estimate_lipschitz needs samples >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..w)
            .map(|j| rng.gen_range(bounds.lo[j]..=bounds.hi[j]))
            .collect()
    };
    let mut best = 0.0f64;
    for i in 0..samples {
        let t: f64 = rng.gen();
        let x1 = draw(&mut rng);
        let x2 = if i % 2 == 0 {
            draw(&mut rng)
        } else {
            let j = rng.gen_range(0..w);
            let span = (bounds.hi[j] - bounds.lo[j]).max(1.0);
            let mut e: f64 = rng.gen_range(-1.0..1.0);
            if e.abs() < 0.1 {
                e = 0.1f64.copysign(e + f64::MIN_POSITIVE);
            }
            let mut x2 = x1.clone();
            x2[j] = (x1[j] + 1e-3 * span * e).clamp(bounds.lo[j], bounds.hi[j]);
            x2
        };
        let dz: Vec<f64> = x1[1..].iter().zip(&x2[1..]).map(|(a, b)| a - b).collect();
        let dist = (x1[0] - x2[0]).abs() + norm2(&dz);
        if dist < 1e-15 {
            continue;
        }
        let q = (g.eval(t, x1[0], &x1[1..]) - g.eval(t, x2[0], &x2[1..])).abs() / dist;
        if q > best {
            best = q;
        }
    }
    Ok(best)
}
