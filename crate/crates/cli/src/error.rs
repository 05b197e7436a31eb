use thiserror::Error;

use ringflow::{AnalysisError, ModelError, SimError, SynthesisError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InfeasibleEquilibrium { .. } | ModelError::Unreachable { .. } => CliError::Infeasible(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Domain(_) => CliError::Config(e.to_string()),
            AnalysisError::Numerical { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Model(m) => m.into(),
            SynthesisError::InvalidWeights(_) | SynthesisError::Topology(_) => CliError::Config(e.to_string()),
            SynthesisError::StructuredInfeasible => CliError::Infeasible(e.to_string()),
            SynthesisError::Numerical { .. } | SynthesisError::UnboundedNorm(_) | SynthesisError::Sdp(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidScenario(_) => CliError::Config(e.to_string()),
            SimError::Export(_) | SimError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
