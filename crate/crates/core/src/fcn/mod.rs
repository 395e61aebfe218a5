//! BasicFCN: a two-convolution network trained with focal loss and Adam,
//! plus validation-based threshold selection.

mod adam;
pub mod io;
mod loss;
mod model;
mod tensor;
mod threshold;
mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use io::{read_weights, write_weights};
pub use loss::{focal_loss, focal_loss_logits, focal_terms, FocalConfig};
pub use model::{fcn_forward, sigmoid, BatchStats, BnMode, FcnWeights, Params, HIDDEN, KERNEL};
pub use tensor::{Real, Tensor4};
pub use threshold::{counts_at, default_grid, select_threshold, ThresholdChoice, ThresholdCriterion};
pub use train::{
    predict_samples, train, train_with_observer, validation_split, EpochCriterion, EpochLog, TrainConfig,
    TrainOutcome, TrainSample,
};
