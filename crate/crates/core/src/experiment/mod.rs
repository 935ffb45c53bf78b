//! End-to-end runs: simulate or connect a scorer, render and score probes,
//! aggregate, fit, and persist everything under a content-addressed run id.

mod config;
mod plot;
mod run;

use thiserror::Error;

pub use config::{run_id, ExperimentConfig, ResolvedInputs, ScorerConfig, CACHE_DIR_ENV};
pub use plot::render_plot;
pub use run::{
    list_runs, load_run, run_experiment, Progress, ProbeMass, RunManifest, RunResult, RunState,
    Runner, CHECKPOINT_EVERY, CHECKPOINT_FILE, CONFIG_FILE, FIT_FILE, MANIFEST_FILE, MASSES_FILE,
    MODEL_FILE, PLOT_FILE, SERIES_FILE,
};

use crate::scm::{DagError, DependenceError, ScmError};
use crate::scorer::ScoreError;
use crate::stats::StatsError;
use crate::templates::TemplateError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Dependence(#[from] DependenceError),
    #[error("{}{source}", probe_index.map(|i| format!("probe {i}: ")).unwrap_or_default())]
    Scorer {
        probe_index: Option<usize>,
        source: ScoreError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error("run not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ScoreError> for ExperimentError {
    fn from(source: ScoreError) -> Self {
        match source {
            ScoreError::Config(msg) => ExperimentError::Config(msg),
            source => ExperimentError::Scorer { probe_index: None, source },
        }
    }
}

impl ExperimentError {
    /// Process exit code: 1 config, 2 scorer or network, 3 degenerate statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Scorer { .. } => 2,
            ExperimentError::Degenerate(_)
            | ExperimentError::Dependence(DependenceError::Degenerate(_))
            | ExperimentError::Stats(StatsError::Degenerate | StatsError::RankDeficient(_)) => 3,
            _ => 1,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.exit_code() == 3
    }
}
