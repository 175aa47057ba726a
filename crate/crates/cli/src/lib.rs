//! Offline pipeline behind the `advx` command: ingest or synthesize data,
//! train fixture networks, run attack sweeps, project, bin, bundle, serve.

pub mod app;
pub mod error;
pub mod pipeline;

pub use error::{CliError, CliResult, Failure};
