use thiserror::Error;

/// Error type shared by all solvers and the CLI front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} outside supported range 1..=3")]
    UnsupportedDimension(usize),

    #[error("lattice requires horizon > 0 and steps >= 1 (got T={horizon}, N={steps})")]
    InvalidLattice { horizon: f64, steps: usize },

    #[error("field lives on level {found}, expected level {expected}")]
    LevelMismatch { expected: usize, found: usize },

    #[error("invalid level range: start={start}, end={end}, lattice steps={steps}")]
    LevelOrder {
        start: usize,
        end: usize,
        steps: usize,
    },

    #[error(
        "gamma positivity violated: c_rep*(sqrt(dt*d)+dt) = {margin} >= 1; refine the time grid"
    )]
    PositivityViolation { margin: f64 },

    #[error("beta control has norm {norm} outside the closed unit ball")]
    BetaOutsideBall { norm: f64 },

    #[error("control grid is empty")]
    EmptyGrid,

    #[error("dual domain grid is empty")]
    EmptyDualDomain,

    #[error("obstacle exceeds terminal condition at node {node} of level {level}")]
    ObstacleViolation { level: usize, node: usize },

    #[error("brute-force budget exceeded: {count:.3e} policy combinations > {budget:.3e}")]
    BudgetExceeded { count: f64, budget: f64 },

    #[error("unknown catalog name: {0}")]
    UnknownCatalog(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
