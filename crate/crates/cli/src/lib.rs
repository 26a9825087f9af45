//! The `langfield` command-line tool: scene synthesis, rendering, queries,
//! evaluation, label collection, gradient audits, experiments and an HTTP
//! service for the viewer.

mod args;
mod commands;
pub mod query;
pub mod serve;

pub use args::*;
pub use commands::{run, GATE_FAILURE};
