//! Batch front end for `qsd-core`: configuration parsing, the verification
//! suite and the `solve`, `verify` and `simulate` pipelines.

pub mod commands;
pub mod config;
pub mod suite;

pub use commands::{
    cmd_simulate, cmd_solve, cmd_verify, cmd_verify_with, CommandError, RunReport, SimKind,
};
pub use config::{ConfigError, ProblemConfig};
pub use suite::{CheckResult, Suite, Verdict};
