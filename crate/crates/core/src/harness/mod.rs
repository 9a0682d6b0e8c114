//! Experiment harness behind the command-line tool: training and
//! evaluation loops, equivariance measurement, the sample-count ablation,
//! and sampler / dataset utilities.

mod ablate;
mod config;
mod equivariance;
mod eval;
mod metrics;
mod splits;
mod tools;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::data::DataError;
use crate::haar::SamplerError;
use crate::layers::LayerError;
use crate::lie::LieError;

pub use ablate::{ablate_samples, AblationReport, AblationRow};
pub use config::{
    AblationConfig, DataConfig, EquivarianceConfig, ExperimentConfig, GenDatasetConfig,
    SampleHaarConfig, Split, TrainConfig,
};
pub use equivariance::{equivariance_test, gaussian_warps, EquivarianceRow};
pub use eval::{
    evaluate, evaluate_checkpoints, ClassAccuracy, EvalReport, EvalSummary, SplitAggregate,
};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter, RunLock};
pub use splits::{load_splits, Splits};
pub use tools::{gen_dataset, sample_haar, SampleHaarOutput};
pub use train::{initial_params, train, TrainOptions, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}; last good checkpoint {last_good}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
        last_good: PathBuf,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit status: 2 configuration, 3 data or file format,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Toml(_) | HarnessError::Locked(_) => 2,
            HarnessError::NonFinite { .. } | HarnessError::Lie(_) => 4,
            HarnessError::Sampler(SamplerError::Config(_)) => 2,
            HarnessError::Sampler(SamplerError::Lie(_)) => 4,
            HarnessError::Ad(e) => ad_code(e),
            HarnessError::Layer(e) => match e {
                LayerError::Config(_) | LayerError::GroupMismatch(_) => 2,
                LayerError::NonFinite(_) | LayerError::Lie(_) => 4,
                LayerError::Ad(e) => ad_code(e),
                LayerError::Sampler(SamplerError::Config(_)) => 2,
                LayerError::Sampler(SamplerError::Lie(_)) => 4,
                LayerError::Data(e) => data_code(e),
            },
            HarnessError::Data(e) => data_code(e),
            HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => 3,
        }
    }
}

fn ad_code(e: &AdError) -> i32 {
    match e {
        AdError::NonFinite { .. } => 4,
        AdError::Shape(_) => 2,
        AdError::Checkpoint(_) | AdError::Io(_) => 3,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Config(_) | DataError::Sampler(SamplerError::Config(_)) => 2,
        DataError::Lie(_) | DataError::Sampler(SamplerError::Lie(_)) => 4,
        _ => 3,
    }
}
