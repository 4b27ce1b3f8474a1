//! Experiment orchestration: configs, single runs, ε sweeps and report files.

mod config;
mod experiment;
mod report;

use thiserror::Error;

use crate::accountant::AccountantError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::mia::MiaError;
use crate::nn::NnError;
use crate::train::TrainError;

pub use config::{
    Architecture, AttackConfig, DataSource, DatasetConfig, ExperimentConfig, ModelConfig, PretrainConfig,
    PrivacyTarget, TrainingConfig, UndersampleSpec,
};
pub use experiment::{
    run_experiment, run_experiment_timed, run_sweep, AccountingProvenance, AttackSummary, Cell, DatasetSummary,
    ExperimentReport, SWEEP_EPSILONS,
};
pub use report::{
    bound_curve, emit_report, format_epsilon, format_interval, parse_records, plot_points, OutputFormat, PlotPoint,
    PLOT_FILE, RECORDS_FILE, TABLE_FILE, TABLE_MARKDOWN_FILE,
};

/// Process exit codes of the command-line front end.
pub mod exit_code {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const CALIBRATION: i32 = 4;
    pub const DIVERGENCE: i32 = 5;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("calibration error: {0}")]
    Calibration(#[from] AccountantError),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: u64, loss: f64 },
    #[error("attack error: {0}")]
    Attack(#[from] MiaError),
    #[error("metrics error: {0}")]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed record: {reason}")]
    Parse { path: String, reason: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => exit_code::CONFIG,
            HarnessError::Data(_) => exit_code::DATA,
            HarnessError::Calibration(_) => exit_code::CALIBRATION,
            HarnessError::Divergence { .. } => exit_code::DIVERGENCE,
            HarnessError::Attack(MiaError::Io { .. } | MiaError::Format { .. }) => exit_code::DATA,
            HarnessError::Attack(_)
            | HarnessError::Metrics(_)
            | HarnessError::Io { .. }
            | HarnessError::Parse { .. } => exit_code::OTHER,
        }
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        match e {
            // Non-finite outputs after training mean the weights blew up.
            NnError::NonFinite(_) => HarnessError::Divergence { epoch: 0, step: 0, loss: f64::NAN },
            e => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Config(m),
            TrainError::Network(e) => e.into(),
            TrainError::Optimizer(e) => HarnessError::Config(e.to_string()),
            TrainError::Calibration(e) => HarnessError::Calibration(e),
            TrainError::Divergence { epoch, step, loss } => HarnessError::Divergence { epoch, step, loss },
        }
    }
}
