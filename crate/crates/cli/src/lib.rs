//! Experiment driver behind the `shapeforge` binary: run configuration, the
//! gen → augment → train → eval pipeline and report comparison.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::Run;

/// Worker cap from `SHAPEFORGE_THREADS`, defaulting to the available cores.
pub fn thread_cap() -> std::result::Result<usize, CliError> {
    match std::env::var("SHAPEFORGE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("SHAPEFORGE_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
