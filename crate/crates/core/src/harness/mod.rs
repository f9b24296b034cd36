//! Experiment plumbing: configuration, dataset files, synthetic data,
//! training, evaluation and the file-level fusion and zero-shot steps the
//! command line exposes.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod ops;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::affect_types::Task;
use crate::autodiff::{AutodiffError, CheckpointError};
use crate::fusion::FusionError;
use crate::losses::LossError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::relatedness::RelatednessError;
use crate::sampler::SamplerError;
use crate::zeroshot::ZeroShotError;

pub use config::{RelatednessChoice, RunConfig};
pub use dataset::Dataset;
pub use eval::{evaluate, parse_predictions, predict_samples, prediction_records, predictions_csv};
pub use synth::{generate_dataset, SyntheticSpec, TaskCounts};
pub use train::{load_model, run_training, save_model, train, EpochRecord, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("reading or writing {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Data { file: String, line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("loss diverged at epoch {epoch}, iteration {iteration}: {detail}")]
    DivergedLoss {
        epoch: usize,
        iteration: usize,
        detail: String,
    },
    #[error("model has no head for task {}", .0.as_str())]
    IncompatibleHeads(Task),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Relatedness(#[from] RelatednessError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
