use ddclock::analysis::AnalysisError;
use ddclock::dynamics::DynamicsError;
use ddclock::noise::NoiseError;
use ddclock::optimizer::OptimizerError;
use ddclock::spectrum::SpectrumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("labeling/degeneracy failure: {0}")]
    Labeling(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Labeling(_) => 3,
            CliError::Solver(_) => 4,
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Labeling(e.to_string()),
        }
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(format!("σ calibration: {e}")),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Spectrum(s) => s.into(),
            OptimizerError::InvalidInterval(_) => CliError::Config(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Spectrum(s) => s.into(),
            DynamicsError::Noise(n) => n.into(),
            DynamicsError::Resolution { .. } | DynamicsError::Invalid(_) => CliError::Config(e.to_string()),
            DynamicsError::Linalg(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Spectrum(s) => s.into(),
            AnalysisError::TooFewPoints { .. } | AnalysisError::Invalid(_) => CliError::Config(e.to_string()),
            AnalysisError::TooFewExtrema(_) | AnalysisError::NoConvergence(_) => CliError::Solver(e.to_string()),
        }
    }
}
