//! Temporal credit assignment for episodic rewards: learned return
//! decompositions over intervals of a trajectory, the interval policy-gradient
//! estimators built on them, and the tooling to train and verify both.

pub mod autodiff;
pub mod buffers;
pub mod config;
pub mod decomposer;
pub mod envs;
mod error;
pub mod interval_pg;
pub mod io;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod runner;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
