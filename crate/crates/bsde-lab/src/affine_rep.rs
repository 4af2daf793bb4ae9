//! Min-max representation of Lipschitz drivers as affine functions, and the
//! Fenchel-Legendre inf-representation for concave drivers.
//!
//! The pointwise identity is
//!   f(t, x) = max_alpha min_{|beta|<=1} [ F(t, beta, alpha) + c <beta, x> ]
//! with F(t, beta, alpha) = f(t, alpha) - c <beta, alpha> and c the Euclidean
//! Lipschitz constant. On grids the identity is exact whenever the current
//! point x and the minimizing unit directions are injected (adaptive mode);
//! uniform-grid mode is kept to measure discretization error honestly.

use crate::generators::{norm2, Generator};
use crate::{Error, Result};

/// Compact discretization of the control sets: a box grid for alpha and the
/// scaled integer lattice points of the closed unit ball for beta.
#[derive(Debug, Clone)]
pub struct GridConfig {
    pub alpha_lo: Vec<f64>,
    pub alpha_hi: Vec<f64>,
    pub alpha_step: f64,
    pub beta_resolution: usize,
    pub adaptive: bool,
}

impl GridConfig {
    pub fn adaptive(radius: f64, step: f64, beta_resolution: usize, width: usize) -> Self {
        GridConfig {
            alpha_lo: vec![-radius; width],
            alpha_hi: vec![radius; width],
            alpha_step: step,
            beta_resolution,
            adaptive: true,
        }
    }

    pub fn uniform(radius: f64, step: f64, beta_resolution: usize, width: usize) -> Self {
        let mut g = Self::adaptive(radius, step, beta_resolution, width);
        g.adaptive = false;
        g
    }
}

#[derive(Debug, Clone)]
pub struct AlphaGrid {
    pub width: usize,
    points: Vec<f64>,
}

impl AlphaGrid {
    pub fn len(&self) -> usize {
        self.points.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone)]
pub struct BetaGrid {
    pub width: usize,
    points: Vec<f64>,
    /// Convex-hull vertex indices (width 2 only). A linear form attains its
    /// minimum over the grid at a hull vertex, so DPP scans may skip interior
    /// points without changing the value.
    hull: Option<Vec<usize>>,
}

impl BetaGrid {
    pub fn len(&self) -> usize {
        self.points.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.width..(i + 1) * self.width]
    }

    /// min over grid points of <beta, v>.
    pub fn min_dot(&self, v: &[f64]) -> f64 {
        let scan = |idx: &mut dyn Iterator<Item = usize>| {
            let mut m = f64::INFINITY;
            for i in idx {
                let d = dot(self.point(i), v);
                if d < m {
                    m = d;
                }
            }
            m
        };
        match &self.hull {
            Some(h) => scan(&mut h.iter().copied()),
            None => scan(&mut (0..self.len())),
        }
    }

    /// Full scan returning the lexicographically first minimizer index.
    pub fn min_dot_full(&self, v: &[f64]) -> (f64, usize) {
        let mut m = f64::INFINITY;
        let mut arg = 0;
        for i in 0..self.len() {
            let d = dot(self.point(i), v);
            if d < m {
                m = d;
                arg = i;
            }
        }
        (m, arg)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn grid_axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "bad grid axis: lo={lo}, hi={hi}, step={step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

pub fn build_alpha_grid(cfg: &GridConfig, width: usize) -> Result<AlphaGrid> {
    if cfg.alpha_lo.len() != width || cfg.alpha_hi.len() != width {
        return Err(Error::InvalidParameter(format!(
            "alpha box must have {width} coordinates"
        )));
    }
    let axes: Vec<Vec<f64>> = (0..width)
        .map(|i| grid_axis(cfg.alpha_lo[i], cfg.alpha_hi[i], cfg.alpha_step))
        .collect::<Result<_>>()?;
    let total: usize = axes.iter().map(|a| a.len()).product();
    if total == 0 {
        return Err(Error::EmptyGrid);
    }
    let mut points = Vec::with_capacity(total * width);
    let mut idx = vec![0usize; width];
    loop {
        for (i, &k) in idx.iter().enumerate() {
            points.push(axes[i][k]);
        }
        // lexicographic odometer, last coordinate fastest
        let mut pos = width;
        loop {
            if pos == 0 {
                return Ok(AlphaGrid { width, points });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub fn build_beta_grid(resolution: usize, width: usize) -> Result<BetaGrid> {
    if resolution == 0 {
        return Err(Error::EmptyGrid);
    }
    let m = resolution as i64;
    let mut ints: Vec<i64> = Vec::new();
    let mut points: Vec<f64> = Vec::new();
    let mut p = vec![-m; width];
    loop {
        let n2: i64 = p.iter().map(|x| x * x).sum();
        if n2 <= m * m {
            ints.extend_from_slice(&p);
            points.extend(p.iter().map(|&x| x as f64 / m as f64));
        }
        let mut pos = width;
        loop {
            if pos == 0 {
                let hull = if width == 2 {
                    Some(hull_2d(&ints))
                } else {
                    None
                };
                return Ok(BetaGrid {
                    width,
                    points,
                    hull,
                });
            }
            pos -= 1;
            p[pos] += 1;
            if p[pos] <= m {
                break;
            }
            p[pos] = -m;
        }
    }
}

/// Andrew's monotone chain over integer points; returns indices into the
/// point list (points are stored flattened, two ints per point).
fn hull_2d(ints: &[i64]) -> Vec<usize> {
    let n = ints.len() / 2;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (ints[2 * i], ints[2 * i + 1]));
    let cross = |o: usize, a: usize, b: usize| -> i64 {
        (ints[2 * a] - ints[2 * o]) * (ints[2 * b + 1] - ints[2 * o + 1])
            - (ints[2 * a + 1] - ints[2 * o + 1]) * (ints[2 * b] - ints[2 * o])
    };
    let build = |iter: &mut dyn Iterator<Item = usize>| {
        let mut chain: Vec<usize> = Vec::new();
        for i in iter {
            while chain.len() >= 2
                && cross(chain[chain.len() - 2], chain[chain.len() - 1], i) <= 0
            {
                chain.pop();
            }
            chain.push(i);
        }
        chain.pop();
        chain
    };
    let mut hull = build(&mut order.iter().copied());
    hull.extend(build(&mut order.iter().rev().copied()));
    hull
}

/// F(t, beta, alpha) = f(t, alpha1, alpha2) - c_rep <beta, alpha>.
pub fn big_f(g: &Generator, t: f64, beta: &[f64], alpha: &[f64]) -> Result<f64> {
    let n = norm2(beta);
    if n > 1.0 + 1e-12 {
        return Err(Error::BetaOutsideBall { norm: n });
    }
    Ok(g.eval(t, alpha[0], &alpha[1..]) - g.c_rep * dot(beta, alpha))
}

/// Inner scan machinery shared by `minmax_eval` and the game DPP solvers.
pub(crate) struct BracketScan<'a> {
    pub agrid: &'a AlphaGrid,
    pub bgrid: &'a BetaGrid,
    pub adaptive: bool,
    pub c: f64,
}

impl BracketScan<'_> {
    fn inner_min(&self, v: &[f64]) -> f64 {
        let mut m = self.bgrid.min_dot(v);
        if self.adaptive {
            // injected beta = -v/|v|; its inner product with v is exactly -|v|
            let n = norm2(v);
            if n > 0.0 && -n < m {
                m = -n;
            }
        }
        m
    }

    /// max over alpha (grid, then the injected point x when adaptive) of
    /// f(t, alpha) + c * min over beta of <beta, x - alpha>.
    /// `f_alpha[i]` must hold f(t, alpha_i); `f_x` holds f(t, x).
    pub fn max_min(&self, f_alpha: &[f64], f_x: f64, x: &[f64]) -> f64 {
        let w = self.agrid.width;
        let mut v = vec![0.0; w];
        let mut best = f64::NEG_INFINITY;
        for (i, fa) in f_alpha.iter().enumerate() {
            let a = self.agrid.point(i);
            for k in 0..w {
                v[k] = x[k] - a[k];
            }
            let b = fa + self.c * self.inner_min(&v);
            if b > best {
                best = b;
            }
        }
        if self.adaptive {
            // alpha = x gives v = 0, so every beta yields exactly f(t, x)
            if f_x > best {
                best = f_x;
            }
        }
        best
    }

    /// Full scan reporting the first maximizing alpha and, at that alpha, the
    /// first minimizing beta (injected points compared after grid points).
    pub fn max_min_with_args(&self, f_alpha: &[f64], f_x: f64, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let w = self.agrid.width;
        let mut best = f64::NEG_INFINITY;
        let mut argmax = vec![0.0; w];
        let mut v = vec![0.0; w];
        let consider = |best: &mut f64, argmax: &mut Vec<f64>, val: f64, a: &[f64]| {
            if val > *best {
                *best = val;
                argmax.copy_from_slice(a);
            }
        };
        for (i, fa) in f_alpha.iter().enumerate() {
            let a = self.agrid.point(i);
            for k in 0..w {
                v[k] = x[k] - a[k];
            }
            consider(&mut best, &mut argmax, fa + self.c * self.inner_min(&v), a);
        }
        if self.adaptive {
            consider(&mut best, &mut argmax, f_x, x);
        }
        // minimizing beta at the chosen alpha
        for k in 0..w {
            v[k] = x[k] - argmax[k];
        }
        let (grid_min, arg) = self.bgrid.min_dot_full(&v);
        let mut argmin = self.bgrid.point(arg).to_vec();
        if self.adaptive {
            let n = norm2(&v);
            if n > 0.0 && -n < grid_min {
                argmin = v.iter().map(|&c| -c / n).collect();
            }
        }
        (best, argmax, argmin)
    }

    /// Diagnostic inf-sup value: min over beta of max over alpha of the same
    /// bracket. Not expected to equal the sup-inf value in general.
    pub fn min_max(&self, f_alpha: &[f64], f_x: f64, x: &[f64]) -> f64 {
        let w = self.agrid.width;
        let mut v = vec![0.0; w];
        let mut outer = f64::INFINITY;
        for j in 0..self.bgrid.len() {
            let beta = self.bgrid.point(j);
            let mut inner = f64::NEG_INFINITY;
            for (i, fa) in f_alpha.iter().enumerate() {
                let a = self.agrid.point(i);
                for k in 0..w {
                    v[k] = x[k] - a[k];
                }
                let b = fa + self.c * dot(beta, &v);
                if b > inner {
                    inner = b;
                }
            }
            if self.adaptive && f_x > inner {
                inner = f_x;
            }
            if inner < outer {
                outer = inner;
            }
        }
        outer
    }
}

/// Lemma-style max-min evaluation of a Lipschitz driver at (t, x).
pub fn minmax_eval(g: &Generator, t: f64, x: &[f64], cfg: &GridConfig) -> Result<f64> {
    let w = g.dim + 1;
    if x.len() != w {
        return Err(Error::InvalidParameter(format!(
            "x must have {w} coordinates"
        )));
    }
    let agrid = build_alpha_grid(cfg, w)?;
    let bgrid = build_beta_grid(cfg.beta_resolution, w)?;
    let f_alpha: Vec<f64> = (0..agrid.len())
        .map(|i| {
            let a = agrid.point(i);
            g.eval(t, a[0], &a[1..])
        })
        .collect();
    let scan = BracketScan {
        agrid: &agrid,
        bgrid: &bgrid,
        adaptive: cfg.adaptive,
        c: g.c_rep,
    };
    Ok(scan.max_min(&f_alpha, g.eval(t, x[0], &x[1..]), x))
}

/// Same as `minmax_eval` but also reports the outer maximizer.
pub fn minmax_eval_with_argmax(
    g: &Generator,
    t: f64,
    x: &[f64],
    cfg: &GridConfig,
) -> Result<(f64, Vec<f64>)> {
    let w = g.dim + 1;
    let agrid = build_alpha_grid(cfg, w)?;
    let bgrid = build_beta_grid(cfg.beta_resolution, w)?;
    let f_alpha: Vec<f64> = (0..agrid.len())
        .map(|i| {
            let a = agrid.point(i);
            g.eval(t, a[0], &a[1..])
        })
        .collect();
    let scan = BracketScan {
        agrid: &agrid,
        bgrid: &bgrid,
        adaptive: cfg.adaptive,
        c: g.c_rep,
    };
    let (v, argmax, _) = scan.max_min_with_args(&f_alpha, g.eval(t, x[0], &x[1..]), x);
    Ok((v, argmax))
}

/// Value of the Fenchel-Legendre transform at one beta point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conjugate {
    Finite(f64),
    Divergent,
}

/// Grid over (y, z_1..z_d) used to approximate the sup in the transform.
#[derive(Debug, Clone)]
pub struct SupGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: f64,
}

fn grid_sup(g: &Generator, t: f64, beta: &[f64], lo: &[f64], hi: &[f64], step: f64) -> Result<f64> {
    let w = g.dim + 1;
    let axes: Vec<Vec<f64>> = (0..w)
        .map(|i| grid_axis(lo[i], hi[i], step))
        .collect::<Result<_>>()?;
    let mut idx = vec![0usize; w];
    let mut x = vec![0.0; w];
    let mut best = f64::NEG_INFINITY;
    loop {
        for (i, &k) in idx.iter().enumerate() {
            x[i] = axes[i][k];
        }
        let v = g.eval(t, x[0], &x[1..]) - dot(beta, &x);
        if v > best {
            best = v;
        }
        let mut pos = w;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// F(t, beta) = sup_(y,z) [ f(t, y, z) - beta1 y - <beta2, z> ], approximated
/// over the grid. Divergence is detected by doubling the sup box: if the grid
/// supremum keeps growing the conjugate is declared +infinity.
pub fn fenchel_transform(g: &Generator, t: f64, beta: &[f64], sup: &SupGrid) -> Result<Conjugate> {
    if !g.concave {
        return Err(Error::InvalidParameter(format!(
            "fenchel_transform needs a concave driver, got {}",
            g.name
        )));
    }
    let w = g.dim + 1;
    if beta.len() != w || sup.lo.len() != w || sup.hi.len() != w {
        return Err(Error::InvalidParameter(format!(
            "fenchel transform needs {w}-coordinate beta and sup box"
        )));
    }
    let s1 = grid_sup(g, t, beta, &sup.lo, &sup.hi, sup.step)?;
    let lo2: Vec<f64> = sup.lo.iter().map(|&v| 2.0 * v).collect();
    let hi2: Vec<f64> = sup.hi.iter().map(|&v| 2.0 * v).collect();
    let s2 = grid_sup(g, t, beta, &lo2, &hi2, sup.step)?;
    if s2 - s1 > 1e-6 * (1.0 + s1.abs()) {
        Ok(Conjugate::Divergent)
    } else {
        Ok(Conjugate::Finite(s2))
    }
}

/// Finite part of the conjugate domain, sampled on a beta grid, with the
/// transform values stored alongside.
#[derive(Debug, Clone)]
pub struct FenchelDual {
    pub width: usize,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl FenchelDual {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.width..(i + 1) * self.width]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn from_parts(width: usize, points: Vec<f64>, values: Vec<f64>) -> Self {
        FenchelDual {
            width,
            points,
            values,
        }
    }

    /// Largest per-coordinate spacing between neighbouring stored points;
    /// used as the grid-scale tolerance in cross-checks.
    pub fn max_step(&self) -> f64 {
        let mut step = 0.0f64;
        for c in 0..self.width {
            let mut coords: Vec<f64> = (0..self.len()).map(|i| self.point(i)[c]).collect();
            coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
            coords.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
            for w in coords.windows(2) {
                step = step.max(w[1] - w[0]);
            }
        }
        step
    }
}

/// Scan a per-coordinate beta box, keep the points with finite conjugate.
pub fn build_dual(
    g: &Generator,
    t: f64,
    beta_lo: &[f64],
    beta_hi: &[f64],
    beta_step: &[f64],
    sup: &SupGrid,
) -> Result<FenchelDual> {
    let w = g.dim + 1;
    if beta_lo.len() != w || beta_hi.len() != w || beta_step.len() != w {
        return Err(Error::InvalidParameter(format!(
            "dual beta box must have {w} coordinates"
        )));
    }
    let axes: Vec<Vec<f64>> = (0..w)
        .map(|i| {
            if beta_hi[i] == beta_lo[i] {
                Ok(vec![beta_lo[i]])
            } else {
                grid_axis(beta_lo[i], beta_hi[i], beta_step[i])
            }
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut idx = vec![0usize; w];
    let mut beta = vec![0.0; w];
    loop {
        for (i, &k) in idx.iter().enumerate() {
            beta[i] = axes[i][k];
        }
        if let Conjugate::Finite(v) = fenchel_transform(g, t, &beta, sup)? {
            points.extend_from_slice(&beta);
            values.push(v);
        }
        let mut pos = w;
        loop {
            if pos == 0 {
                if values.is_empty() {
                    return Err(Error::EmptyDualDomain);
                }
                return Ok(FenchelDual {
                    width: w,
                    points,
                    values,
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// f(t, y, z) recovered as min over the stored domain of
/// F(beta) + beta1 y + <beta2, z>.
pub fn inf_representation_eval(dual: &FenchelDual, y: f64, z: &[f64]) -> Result<f64> {
    if dual.is_empty() {
        return Err(Error::EmptyDualDomain);
    }
    let mut x = vec![y];
    x.extend_from_slice(z);
    let mut best = f64::INFINITY;
    for i in 0..dual.len() {
        let v = dual.value(i) + dot(dual.point(i), &x);
        if v < best {
            best = v;
        }
    }
    Ok(best)
}
