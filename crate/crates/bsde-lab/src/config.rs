//! JSON experiment configuration shared by every CLI subcommand.

use serde::{Deserialize, Serialize};

use crate::affine_rep::{GridConfig, SupGrid};
use crate::generators::Generator;
use crate::lattice::{Lattice, NodeField};
use crate::{Error, Result};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub c_rep: Option<f64>,
    #[serde(default = "TerminalSpec::default")]
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub obstacle: ObstacleSpec,
    #[serde(default)]
    pub grids: GridsConfig,
    #[serde(default)]
    pub levels: LevelsConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Domination constant checked by `axioms`; defaults to the driver's
    /// Lipschitz constant.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub fenchel: FenchelConfig,
}

fn default_seed() -> u64 {
    7
}

fn default_samples() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub horizon: f64,
    pub steps: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Zero,
    Constant { c: f64 },
    Affine { a: f64, b1: f64, b2: Vec<f64> },
    MuNorm { mu: f64 },
    MuAbsZ { mu: f64 },
    NegMuAbsZ { mu: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    /// First Brownian coordinate at the horizon.
    Bt,
    BtSquared,
    Call { strike: f64 },
    Put { strike: f64 },
    Custom { values: Vec<f64> },
}

impl TerminalSpec {
    fn default() -> Self {
        TerminalSpec::Bt
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleSpec {
    #[default]
    None,
    /// S(t) = a + b t, constant across each level.
    Linear { a: f64, b: f64 },
    PutPayoff { strike: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    pub alpha_radius: f64,
    pub alpha_step: f64,
    pub beta_resolution: usize,
    pub adaptive: bool,
}

impl Default for GridsConfig {
    fn default() -> Self {
        GridsConfig {
            alpha_radius: 3.0,
            alpha_step: 1.0,
            beta_resolution: 2,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    #[serde(default)]
    pub s: usize,
    /// Defaults to the final lattice level.
    #[serde(default)]
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FenchelConfig {
    pub beta_lo: Vec<f64>,
    pub beta_hi: Vec<f64>,
    pub beta_step: Vec<f64>,
    pub sup_radius: f64,
    pub sup_step: f64,
}

impl Default for FenchelConfig {
    fn default() -> Self {
        FenchelConfig {
            beta_lo: Vec::new(),
            beta_hi: Vec::new(),
            beta_step: Vec::new(),
            sup_radius: 5.0,
            sup_step: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("config parse error: {e}")))
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::build(self.lattice.horizon, self.lattice.steps, self.lattice.dim)
    }

    pub fn generator(&self) -> Result<Generator> {
        let d = self.lattice.dim;
        let g = match &self.generator {
            GeneratorSpec::Zero => Generator::zero(d),
            GeneratorSpec::Constant { c } => Generator::constant(*c, d),
            GeneratorSpec::Affine { a, b1, b2 } => Generator::affine(*a, *b1, b2.clone(), d)?,
            GeneratorSpec::MuNorm { mu } => Generator::mu_norm(*mu, d)?,
            GeneratorSpec::MuAbsZ { mu } => Generator::mu_abs_z(*mu, d)?,
            GeneratorSpec::NegMuAbsZ { mu } => Generator::neg_mu_abs_z(*mu, d)?,
        };
        match self.c_rep {
            Some(c) => g.with_c_rep(c),
            None => Ok(g),
        }
    }

    pub fn terminal_level(&self) -> usize {
        self.levels.t.unwrap_or(self.lattice.steps)
    }

    pub fn terminal(&self, lat: &Lattice) -> Result<NodeField> {
        let level = self.terminal_level();
        if level > lat.steps() {
            return Err(Error::LevelOrder {
                start: self.levels.s,
                end: level,
                steps: lat.steps(),
            });
        }
        Ok(match &self.terminal {
            TerminalSpec::Bt => NodeField::from_fn(lat, level, |b| b[0]),
            TerminalSpec::BtSquared => NodeField::from_fn(lat, level, |b| b[0] * b[0]),
            TerminalSpec::Call { strike } => {
                let k = *strike;
                NodeField::from_fn(lat, level, |b| (b[0] - k).max(0.0))
            }
            TerminalSpec::Put { strike } => {
                let k = *strike;
                NodeField::from_fn(lat, level, |b| (k - b[0]).max(0.0))
            }
            TerminalSpec::Custom { values } => {
                if values.len() != lat.node_count(level) {
                    return Err(Error::InvalidParameter(format!(
                        "custom terminal has {} values, level {level} has {} nodes",
                        values.len(),
                        lat.node_count(level)
                    )));
                }
                NodeField {
                    level,
                    values: values.clone(),
                }
            }
        })
    }

    pub fn obstacle(&self, lat: &Lattice) -> Result<Option<Vec<NodeField>>> {
        let end = self.terminal_level();
        Ok(match &self.obstacle {
            ObstacleSpec::None => None,
            ObstacleSpec::Linear { a, b } => Some(
                (0..=end)
                    .map(|k| NodeField::constant(lat, k, a + b * lat.time(k)))
                    .collect(),
            ),
            ObstacleSpec::PutPayoff { strike } => {
                let k0 = *strike;
                Some(
                    (0..=end)
                        .map(|k| NodeField::from_fn(lat, k, |b| (k0 - b[0]).max(0.0)))
                        .collect(),
                )
            }
        })
    }

    pub fn grid_config(&self) -> GridConfig {
        let w = self.lattice.dim + 1;
        let g = &self.grids;
        if g.adaptive {
            GridConfig::adaptive(g.alpha_radius, g.alpha_step, g.beta_resolution, w)
        } else {
            GridConfig::uniform(g.alpha_radius, g.alpha_step, g.beta_resolution, w)
        }
    }

    pub fn fenchel_box(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, SupGrid) {
        let w = self.lattice.dim + 1;
        let f = &self.fenchel;
        let lo = if f.beta_lo.len() == w {
            f.beta_lo.clone()
        } else {
            vec![-2.0; w]
        };
        let hi = if f.beta_hi.len() == w {
            f.beta_hi.clone()
        } else {
            vec![2.0; w]
        };
        let step = if f.beta_step.len() == w {
            f.beta_step.clone()
        } else {
            vec![0.25; w]
        };
        let sup = SupGrid {
            lo: vec![-f.sup_radius; w],
            hi: vec![f.sup_radius; w],
            step: f.sup_step,
        };
        (lo, hi, step, sup)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "lattice": {"horizon": 1.0, "steps": 8, "dim": 1},
                "generator": {"name": "mu_abs_z", "mu": 0.5}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.terminal_level(), 8);
        let lat = cfg.lattice().unwrap();
        let g = cfg.generator().unwrap();
        assert_eq!(g.name, "mu_abs_z");
        assert!(cfg.obstacle(&lat).unwrap().is_none());
        let xi = cfg.terminal(&lat).unwrap();
        assert_eq!(xi.values.len(), 9);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_names() {
        assert!(ExperimentConfig::from_json(
            r#"{"lattice": {"horizon": 1.0, "steps": 8, "dim": 1},
                "generator": {"name": "nope"}}"#
        )
        .is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"lattice": {"horizon": 1.0, "steps": 8, "dim": 1},
                "generator": {"name": "zero"}, "extra": 1}"#
        )
        .is_err());
    }

    #[test]
    fn obstacle_and_custom_terminal() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "lattice": {"horizon": 1.0, "steps": 2, "dim": 1},
                "generator": {"name": "zero"},
                "terminal": {"name": "custom", "values": [1.0, 0.5, 2.0]},
                "obstacle": {"name": "put_payoff", "strike": 0.4}
            }"#,
        )
        .unwrap();
        let lat = cfg.lattice().unwrap();
        assert_eq!(cfg.terminal(&lat).unwrap().values, vec![1.0, 0.5, 2.0]);
        let obs = cfg.obstacle(&lat).unwrap().unwrap();
        assert_eq!(obs.len(), 3);
        assert_eq!(obs[0].values[0], 0.4);
    }
}
