//! Exact backward-equation laboratory on a recombining random-walk lattice:
//! plain and reflected backward stochastic difference equations, their
//! sup-inf game values over affine control brackets, and the dynamic
//! evaluations they induce.

pub mod affine_rep;
pub mod bsde;
pub mod config;
pub mod error;
pub mod evaluations;
pub mod game;
pub mod generators;
pub mod lattice;
pub mod par;
pub mod reflected;
pub mod runner;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
