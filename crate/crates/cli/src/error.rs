//! Fixed exit-code taxonomy with one-line machine-parsable stderr
//! records: 2 = schema, 3 = enumeration cap, 4 = invariant failure,
//! 1 = anything else.

use hcalab_core::analysis::AnalysisError;
use hcalab_core::estimator::EstimatorError;
use hcalab_core::oracle::OracleError;
use hcalab_core::perturb::PerturbError;
use hcalab_core::trajectory::TrajectoryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    EnumerationCap(String),
    #[error("{0}")]
    Invariant(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::EnumerationCap(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Schema(_) => "schema",
            CliError::EnumerationCap(_) => "enumeration_cap",
            CliError::Invariant(_) => "invariant",
            CliError::Other(_) => "error",
        }
    }

    pub fn stderr_record(&self) -> String {
        serde_json::json!({ "error": self.kind(), "detail": self.to_string() }).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(format!("i/o: {e}"))
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::EnumerationCapExceeded { .. } => {
                CliError::EnumerationCap(e.to_string())
            }
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Trajectory(t) => t.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Trajectory(t) => t.into(),
            AnalysisError::Estimator(inner) => inner.into(),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Invariant(e.to_string())
    }
}

impl From<PerturbError> for CliError {
    fn from(e: PerturbError) -> Self {
        match e {
            PerturbError::Analysis(inner) => inner.into(),
            PerturbError::Trajectory(t) => t.into(),
            other => CliError::Schema(other.to_string()),
        }
    }
}
