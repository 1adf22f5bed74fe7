//! Command-line application: configuration, experiment drivers, result
//! export and verification studies.

pub mod cli;
pub mod config;
pub mod run;
pub mod verify;

pub use config::{Mode, RunConfig, Selector};
pub use run::{RunManifest, RunOutcome, OUTPUT_ROOT_ENV};
