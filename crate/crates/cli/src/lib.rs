//! Command-line pipeline for the braintools analyses.

pub mod analysis;
pub mod config;
pub mod error;
pub mod paired;
pub mod pipeline;
pub mod reports;
pub mod util;

pub use error::{CliError, Result};
