//! Desk-scale study of reward modeling on confounded observational outcomes:
//! seeded synthetic generators, ridge and Bradley-Terry reward heads,
//! IV/OLS/DML confounder estimation with outcome residualization, and the
//! diagnostic metrics and experiment harness built on top of them.

pub mod cli;
pub mod deconfound;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod harness;
pub mod io;
pub mod model;
pub mod reward;
pub mod stats;

pub use cli::cli_main;
pub use error::{Error, Result};
