//! Configuration, artifact formats, pipeline stages and oracle suites for
//! the `visracer` command-line tool.

// `!(x > 0.0)` is the NaN-rejecting form of the validation checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod oracle;
pub mod persist;
pub mod pipeline;
pub mod selftest;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use pipeline::{Agent, PolicyId, Run};
