//! Next-latent-frame prediction, its training objective, and the surprise
//! estimators built on top of it.

mod checkpoint;
mod loss;
mod model;
mod surprise;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_history, CheckpointHeader};
pub use loss::{finite_difference_check, lfp_loss, loss_and_gradient};
pub use model::{LinearHead, MlpHead, PredictorModel, PredictorVariant};
pub use surprise::{score_stream, EstimatorMode, SurpriseEstimator, SurpriseReduction, SurpriseTracker};
pub use train::{train, transition_pairs, TrainingConfig, DEFAULT_LOSS_WEIGHT};
