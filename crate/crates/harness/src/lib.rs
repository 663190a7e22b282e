//! Experiment runner for soft-token decoding: TOML specs, parallel decode,
//! probe and figure stages with content-addressed outputs, and the
//! `softthink` command line.

pub mod artifact;
pub mod cli;
pub mod error;
pub mod pipeline;
pub mod spec;

pub use error::{ExitStatus, HarnessError, Result};
