use std::path::PathBuf;

use didex_core::adapt::AdaptError;
use didex_core::dataset::DatasetError;
use didex_core::diffusion::DiffusionError;
use didex_core::eval::EvalError;
use didex_core::label::LabelError;
use didex_core::prompt::PromptError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("prediction and ground-truth stems differ for {dataset}: missing predictions {missing:?}, unexpected predictions {unexpected:?}")]
    StemMismatch { dataset: String, missing: Vec<String>, unexpected: Vec<String> },
    #[error("failure rate {rate:.4} exceeds the threshold {threshold}")]
    FailureRate { rate: f64, threshold: f64 },
    #[error("{count} integrity defects, first: {first}")]
    Defects { count: usize, first: String },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 2 for I/O and network trouble, 1 for bad input.
    pub fn exit_code(&self) -> i32 {
        let environment = match self {
            CliError::Io { .. } => true,
            CliError::Label(e) => e.is_environment(),
            CliError::Diffusion(e) => e.is_environment(),
            CliError::Dataset(e) => e.is_environment(),
            CliError::Adapt(e) => e.is_environment(),
            CliError::FailureRate { .. } => true,
            _ => false,
        };
        if environment {
            2
        } else {
            1
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
