use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("map line {line}: {msg}")]
    MapParse { line: usize, msg: String },

    #[error("invalid point-navigation spec: {0}")]
    InvalidPointNav(String),

    #[error("cannot step from terminal state {0}")]
    TerminalStep(String),

    #[error("state has non-finite components")]
    NonFiniteState,

    #[error("trajectory is not successful")]
    UnsuccessfulTrajectory,

    #[error("demo data: {0}")]
    DemoData(String),

    #[error("{}:{line}: {msg}", path.display())]
    DemoRecord {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no trajectories")]
    NoTrajectories,

    #[error("demonstrator failed: {0}")]
    Demonstrator(String),

    #[error("oracle did not converge: {0}")]
    OracleNotConverged(String),

    #[error("state {0} has an empty optimal action set")]
    EmptyOptimalSet(usize),

    #[error("invalid state distribution: {0}")]
    InvalidDistribution(String),

    #[error("training fault: {0}")]
    TrainingFault(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input (files, configs, arguments) rather
    /// than by a fault during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::MapParse { .. }
                | Error::InvalidPointNav(_)
                | Error::UnsuccessfulTrajectory
                | Error::DemoData(_)
                | Error::DemoRecord { .. }
                | Error::NoTrajectories
                | Error::InvalidDistribution(_)
                | Error::Config(_)
                | Error::Checkpoint(_)
                | Error::Json(_)
        )
    }
}
