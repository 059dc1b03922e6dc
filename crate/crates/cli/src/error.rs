use mckg::checkpoint::CheckpointError;
use mckg::config::ConfigError;
use mckg::data::DataError;
use mckg::eval::EvalError;
use mckg::model::ModelError;
use mckg::training::TrainError;
use std::path::PathBuf;
use thiserror::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn eval_code(e: &EvalError) -> i32 {
    match e {
        EvalError::Model(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Checkpoint(_) => EXIT_CHECKPOINT,
            CliError::Model(_) => EXIT_NUMERICAL,
            CliError::Eval(e) => eval_code(e),
            CliError::Train(e) => match e {
                TrainError::NonFinite { .. }
                | TrainError::Diff(_)
                | TrainError::Model(_)
                | TrainError::NegativeDistance(_) => EXIT_NUMERICAL,
                TrainError::Eval(e) => eval_code(e),
                TrainError::Config(_) | TrainError::Io { .. } => EXIT_INPUT,
            },
        }
    }
}

pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
