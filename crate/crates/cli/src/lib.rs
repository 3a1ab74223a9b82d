//! Orchestration for the `fairlatent` command: configuration, the seeded
//! end-to-end pipeline, sweeps, ablations and report writing.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod run;

pub use config::{Method, Overrides, RunConfig};
pub use error::{Stage, StageError};
