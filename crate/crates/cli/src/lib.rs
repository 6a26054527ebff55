//! Scenario runner behind the `herdlab` binary.

pub mod compare;
pub mod config;
pub mod manifest;
pub mod run;

pub use compare::{compare_csv, CompareReport, Tolerances};
pub use config::{load_config, save_config, RunConfig, Scenario};
pub use manifest::Manifest;
pub use run::run_scenario;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("comparison failed: {0}")]
    Comparison(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
            CliError::Comparison(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Solver(_) => "solver_failure",
            CliError::Comparison(_) => "comparison_failure",
            CliError::Io(_) => "io",
        }
    }
}

impl From<herdlab_core::HerdError> for CliError {
    fn from(e: herdlab_core::HerdError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Worker pool sized by `HERDLAB_THREADS` (unset or 0: one per core).
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let n = match std::env::var("HERDLAB_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Validation(format!("HERDLAB_THREADS must be a non-negative integer, got {v:?}")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}
