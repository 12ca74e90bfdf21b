//! The desk-scale traffic-saliency network: configuration, model, loss,
//! gradient checking, toy training, and the golden forward record.

mod config;
pub mod golden;
mod gradcheck;
mod model;
mod params;
mod train;

pub use config::{DirectionSharing, TrambaConfig};
pub use gradcheck::{gradcheck, synthetic_pair, GradCheckReport, GroupCheck};
pub use model::{collect_param_grads, nearest_downsample, StageOutputs, TapeOutputs, Tramba};
pub use params::{ParamBuilder, ParamId, ParamSet};
pub use train::{synthetic_batch, train_toy, MAX_TOY_BATCH};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("ground truth must be strictly binary, found {0}")]
    NonBinaryGroundTruth(f64),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
}
