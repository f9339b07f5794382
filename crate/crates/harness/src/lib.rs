//! Experiment orchestration: seeded sweeps over budgets, horizons and
//! hyperparameters, a random-policy baseline, and CSV, JSON and SVG output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

pub use config::{AlgoName, AlgoSpec, Budgets, EnvSpec, ExperimentConfig, OutputPaths};
pub use experiment::{
    grid_search, h_sweep, run_one, run_one_detailed, summarize, sweep, ExperimentRecord, GridSearchResult, HyperGrid,
    HyperPoint, RunResult, SummaryRow, SweepOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mdp(#[from] pbrl_core::mdp::MdpError),
    #[error(transparent)]
    Algo(#[from] pbrl_core::algorithms::AlgoError),
    #[error(transparent)]
    Preference(#[from] pbrl_core::preference::PreferenceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Mdp(_) => "environment",
            Self::Algo(_) => "algorithm",
            Self::Preference(_) => "preference",
            Self::Io { .. } => "io",
            Self::Csv(_) => "csv",
            Self::Json(_) => "json",
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}
