//! Library side of the CLI: config schema, manifest, and pipeline runner.
//! The `unifeed` binary is a thin argument-parsing shell over this.

pub mod config;
pub mod manifest;
pub mod pipeline;
