//! Batch commands behind the `pseudograph` binary.
//!
//! Every command is a plain function so it can be driven from tests as well
//! as from the argument parser in `main.rs`.

pub mod commands;
pub mod manifest;

pub use commands::{
    cmd_ablate, cmd_baseline, cmd_eval, cmd_generate, cmd_render, cmd_train, EvalSummary, RunSummary, SceneMetrics,
};
pub use manifest::{Overrides, RunManifest};

use pseudograph::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{failed} of {total} scenes failed")]
    SceneFailures { failed: usize, total: usize },
}

impl CliError {
    /// 2 for bad input, 3 for anything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            _ => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
