//! Command-line surface for repro-samples inference: simulation, candidate sets,
//! coefficient and model confidence sets, and the replication benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
