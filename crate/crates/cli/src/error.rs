use std::process::ExitCode;

use thiserror::Error;

use hjcl_core::checkpoint::CheckpointError;
use hjcl_core::data::DataError;
use hjcl_core::losses::LossError;
use hjcl_core::model::ModelError;
use hjcl_core::trainer::TrainError;
use hjcl_core::{TaxonomyError, TensorError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }

    /// Prefixes the message, keeping the error class.
    pub fn context(self, prefix: &str) -> Self {
        match self {
            CliError::Config(mut p) => {
                p.insert(0, prefix.to_string());
                CliError::Config(p)
            }
            CliError::Data(m) => CliError::Data(format!("{prefix}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{prefix}: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(p) => CliError::Config(p),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::Data(format!("taxonomy: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("checkpoint: {e}"))
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(msg) => CliError::Config(vec![msg]),
            ModelError::EmptyInput | ModelError::TokenOutOfRange { .. } => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::Taxonomy(t) => t.into(),
            LossError::Temperature(_) => CliError::Config(vec![e.to_string()]),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(p) => CliError::Config(p),
            TrainError::BatchTooLarge { .. } => CliError::Config(vec![e.to_string()]),
            TrainError::EmptyCorpus => CliError::Data(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Taxonomy(t) => t.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Loss(l) => l.into(),
            TrainError::NonFinite { .. } | TrainError::Tensor(_) => CliError::Numeric(e.to_string()),
        }
    }
}
