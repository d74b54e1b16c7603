//! Training, evaluation, ablation and inference on top of `vsod-core`.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod optim;
pub mod train;

pub use ablate::{ablate, AblationRow, AblationRun, AblationTable};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{HarnessError, Result};
pub use evaluate::{evaluate, Evaluation};
pub use infer::infer;
pub use optim::Adam;
pub use train::{train, StepLog, TrainOutcome, Trainer};

use vsod_core::Model;

/// Rebuilds the model a checkpoint was trained with.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(&ckpt.config.model(), ckpt.config.seed)?;
    model.load_params(ckpt.params.clone())?;
    Ok(model)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
struct TrainingGuide;
