pub mod analyze;
pub mod eval;
pub mod train;

use std::path::Path;

use dvelab::analysis::AnalysisError;
use dvelab::models::{ActorCritic, Checkpoint, ModelError};
use dvelab::train::TrainError;

use crate::CliError;

/// Maps a library error to an exit category: malformed inputs are
/// configuration errors, everything else a runtime failure.
pub fn runtime<E: Into<LibError>>(e: E) -> CliError {
    match e.into() {
        LibError::Train(e @ (TrainError::Config(_) | TrainError::EmptyLevelSet | TrainError::State(_))) => {
            CliError::Config(e.to_string())
        }
        LibError::Train(TrainError::Model(e)) | LibError::Model(e) => model_error(e),
        LibError::Analysis(AnalysisError::InvalidInput(m)) => CliError::Config(m),
        LibError::Analysis(e @ AnalysisError::NotTabular(_)) => CliError::Config(e.to_string()),
        LibError::Analysis(AnalysisError::Train(e)) => runtime(e),
        LibError::Analysis(AnalysisError::Model(e)) => model_error(e),
        other => CliError::Runtime(other.to_string()),
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Config(_)
        | ModelError::HeadMismatch { .. }
        | ModelError::ObsDim { .. }
        | ModelError::Checkpoint(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LibError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Env(#[from] dvelab::envs::EnvError),
}

pub fn load_network(path: &Path) -> Result<ActorCritic, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ckpt.network().map_err(runtime)
}

pub fn level_set(spec: &str, gapworld_length: usize) -> Result<Vec<dvelab::envs::LevelHandle>, CliError> {
    dvelab::envs::parse_level_set(spec, gapworld_length).map_err(|e| CliError::Config(e.to_string()))
}
