//! Loss terms, schedules, Adam and the epoch loop.

mod adam;
mod losses;
mod plan;
mod trainer;

pub use adam::Adam;
pub use losses::{
    ar_terms, recon_terms, reg_term, rel_err_rows, tf_terms, timegen_terms, train_loss, Batch,
    LossParts, ModelProcessor, Processor,
};
pub use plan::{LossWeights, TrainPlan};
pub use trainer::{EpochLog, TrainOutcome, Trainer, LOG_HEADER};

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::model::{CheckpointError, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid training plan: {0}")]
    Plan(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target frame {row} has zero norm")]
    ZeroNormTarget { row: usize },
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("non-finite gradient in {param} at index {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl TrainError {
    /// Numerical blow-ups that cost one batch rather than the whole run.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient { .. }
                | TrainError::Autodiff(AutodiffError::NonFinite { .. })
                | TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
                | TrainError::Model(ModelError::Divergence { .. })
        )
    }
}
