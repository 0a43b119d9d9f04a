use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trace filename '{path}' does not match b<battery_id>_c<cycle_index>.csv")]
    BadTraceName { path: PathBuf },
    #[error("duplicate (battery '{battery_id}', cycle {cycle_index}) from {path}")]
    DuplicateKey {
        battery_id: String,
        cycle_index: u32,
        path: PathBuf,
    },
    #[error("params and cycles files do not join: {0}")]
    JoinMismatch(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{count} of {total} fits failed; see diagnostics above")]
    FitsFailed { count: usize, total: usize },
    #[error(transparent)]
    Ecm(#[from] soh_core::ecm::EcmError),
    #[error(transparent)]
    Fit(#[from] soh_core::identify::FitError),
    #[error(transparent)]
    Pipeline(#[from] soh_core::pipeline::PipelineError),
    #[error(transparent)]
    Estimator(#[from] soh_core::estimator::EstimatorError),
    #[error(transparent)]
    Sim(#[from] soh_core::simbench::SimError),
}
