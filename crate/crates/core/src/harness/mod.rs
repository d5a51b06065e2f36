//! Experiment plumbing: TOML configuration, datasets, presets and the
//! artifact-writing driver used by the `perfnet` binary and the examples.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod preset;

pub use config::{ExperimentConfig, Instance};
pub use experiment::{run_experiment, ExperimentSummary};


use crate::Error;

/// Process exit codes of the binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    /// A run diverged although the configuration lies in the convergent regime.
    pub const DIVERGED: i32 = 3;
    pub const DATASET: i32 = 4;
    pub const OTHER: i32 = 1;
}

/// Maps an error to the binary's exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidSize(_)
        | Error::NotRegular { .. }
        | Error::NotConnected { .. }
        | Error::Validation(_)
        | Error::Shape { .. }
        | Error::Calibration { .. }
        | Error::StepIndex(_)
        | Error::UnsupportedKind { .. } => exit::CONFIG,
        Error::Dataset { .. } | Error::InsufficientRows { .. } => exit::DATASET,
        _ => exit::OTHER,
    }
}

/// Environment variable capping the worker pool size.
pub const THREADS_VAR: &str = "PERFNET_THREADS";

/// Builds a rayon pool sized by `PERFNET_THREADS` (all cores when unset).
pub fn thread_pool() -> crate::Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
