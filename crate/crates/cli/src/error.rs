use relevo::calendar::CalendarError;
use relevo::cost::CostError;
use relevo::evolution::EvolutionError;
use relevo::fitting::FitError;
use relevo::policy::PolicyError;
use relevo::simulator::SimError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("missing model section: {0}")]
    MissingSection(String),
    #[error("{}: the log has no usable events", .0.display())]
    EmptyLog(PathBuf),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
