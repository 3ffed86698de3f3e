//! Optimization, cross-validation, grid search, metrics and the ridge baseline.

mod cv;
mod data;
mod evaluate;
mod grid;
mod metrics;
mod optim;
mod ridge;
mod schedule;
mod synthetic;


use std::path::PathBuf;

use thiserror::Error;

pub(crate) use cv::run_in_pool;
pub use cv::{batch_ranges, train_cv, train_fold, CvOptions, FoldReport, RunReport, TrainConfig};
pub use data::TrainData;
pub use evaluate::{evaluate_checkpoint, predict_original, predict_training_space, EvalReport, PredictionRow};
pub use grid::{config_cmp, grid_search, select_best, GridCell, GridReport, GridSpec};
pub use metrics::{mae, mean_std, r2, MetricError};
pub use optim::{adamw_step, adamw_step_model, AdamHyper, AdamState};
pub use ridge::{ridge_cv, ridge_fit, ridge_predict, RidgeFold, RidgeReport, DEFAULT_LAMBDAS};
pub use schedule::{early_stop, plateau_scheduler, EarlyStopper, PlateauScheduler, StopDecision};
pub use synthetic::{planted_task, PlantedOptions, PlantedTask};

use crate::embed_store::StoreError;
use crate::model::{CheckpointError, ModelError};
use crate::ndmath::NdError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Shape(#[from] NdError),
    #[error("fold {fold} has {n_train} training and {n_val} validation rows")]
    DegenerateFold { fold: usize, n_train: usize, n_val: usize },
    #[error("fold {fold}, epoch {epoch}: {detail}")]
    Numerical { fold: usize, epoch: usize, detail: String },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("singular system")]
    Singular,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint does not match data: {0}")]
    CheckpointMismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl TrainError {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::Numerical { .. } | TrainError::Singular => true,
            TrainError::Model(e) => e.is_numerical(),
            _ => false,
        }
    }
}
