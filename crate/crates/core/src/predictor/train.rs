use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LatentFrame, TokenGrid};

use super::loss::loss_and_gradient;
use super::model::PredictorModel;

/// Default weight of the LFP objective relative to a primary objective.
pub const DEFAULT_LOSS_WEIGHT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Recorded for provenance. Training optimises the LFP loss alone, so
    /// this coefficient does not rescale the update.
    pub loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 8,
            batch_size: 16,
            loss_weight: DEFAULT_LOSS_WEIGHT,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.loss_weight >= 0.0) {
            return Err(Error::InvalidConfig("loss_weight must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Collects `(frame_t, frame_t+1)` grid pairs. Frames must be spaced one step apart.
pub fn transition_pairs(streams: &[Vec<LatentFrame>]) -> Result<Vec<(&TokenGrid, &TokenGrid)>> {
    let mut pairs = Vec::new();
    for stream in streams {
        for w in stream.windows(2) {
            if w[1].timestamp != w[0].timestamp + 1 {
                return Err(Error::InvalidInput(format!(
                    "training frames must be uniformly spaced: {} follows {}",
                    w[1].timestamp, w[0].timestamp
                )));
            }
            pairs.push((&w[0].grid, &w[1].grid));
        }
    }
    Ok(pairs)
}

/// Minibatch SGD on next-frame transitions.
///
/// Returns the trained model and the mean training loss of each epoch, measured
/// on the minibatches as they are visited. The pair order is reshuffled every
/// epoch from `config.seed`, so identical inputs give identical histories.
pub fn train(
    mut model: PredictorModel,
    streams: &[Vec<LatentFrame>],
    config: &TrainingConfig,
) -> Result<(PredictorModel, Vec<f64>)> {
    config.validate()?;
    let pairs = transition_pairs(streams)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("training needs at least one stream with two frames".into()));
    }
    if pairs[0].0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: pairs[0].0.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i]));
            let (loss, grad) = loss_and_gradient(&model, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            if model.param_count() > 0 {
                model.descend(&grad, config.learning_rate);
            }
        }
        let mean = epoch_loss / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidInput("training diverged; lower the learning rate".into()));
        }
        history.push(mean);
    }
    Ok((model, history))
}
