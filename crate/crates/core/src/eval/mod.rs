//! Rollout-based testing: nRMSE, relative-error fields, time-refinement
//! studies, ablations and their reports.

mod metrics;
pub mod report;
mod study;

pub use metrics::{frame_rel_error, group_by_params, nrmse, relative_error_field, Nrmse, MIN_FRAME_NORM};
pub use study::{
    ablate_rk_stage, eval_time_generalization, evaluate, predict_dataset, run_ablation,
    AblationAxis, AblationReport, AblationSetup, AblationVariant, EvalReport,
};

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model and dataset are incompatible: {0}")]
    Incompatible(String),
    #[error("every true frame has zero norm")]
    ZeroNorm,
}
