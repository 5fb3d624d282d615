use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LatentFrame, TokenGrid};
use crate::vector::{cosine_distance, grid_surprise, pooled_feature};

use super::model::PredictorModel;

/// How prediction error is reduced over the tokens of a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurpriseReduction {
    /// Mean per-token cosine distance.
    #[default]
    TokenMean,
    /// Cosine distance between the pooled prediction and the pooled frame.
    Pooled,
}

/// Estimator mode tag used in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    PredictionError,
    AdjacentSimilarity,
}

impl std::fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorMode::PredictionError => "prediction_error",
            EstimatorMode::AdjacentSimilarity => "adjacent_similarity",
        })
    }
}

/// Per-frame surprise signal.
#[derive(Clone, Debug, PartialEq)]
pub enum SurpriseEstimator {
    /// Distance between the predictor's guess for this frame and the frame itself.
    PredictionError {
        model: PredictorModel,
        reduction: SurpriseReduction,
    },
    /// Cosine distance between the pooled features of consecutive frames.
    AdjacentSimilarity,
}

impl SurpriseEstimator {
    pub fn prediction_error(model: PredictorModel) -> Self {
        SurpriseEstimator::PredictionError {
            model,
            reduction: SurpriseReduction::TokenMean,
        }
    }

    pub fn mode(&self) -> EstimatorMode {
        match self {
            SurpriseEstimator::PredictionError { .. } => EstimatorMode::PredictionError,
            SurpriseEstimator::AdjacentSimilarity => EstimatorMode::AdjacentSimilarity,
        }
    }

    /// Surprise of `current` given the grid of the frame before it.
    pub fn score_grids(&self, prev: &TokenGrid, current: &TokenGrid) -> Result<f64> {
        match self {
            SurpriseEstimator::PredictionError { model, reduction } => {
                let pred = model.predict_next(prev)?;
                match reduction {
                    SurpriseReduction::TokenMean => grid_surprise(&pred, current),
                    SurpriseReduction::Pooled => {
                        pred.check_shape(current)?;
                        cosine_distance(pooled_feature(&pred).as_slice(), pooled_feature(current).as_slice())
                    }
                }
            }
            SurpriseEstimator::AdjacentSimilarity => {
                prev.check_shape(current)?;
                cosine_distance(pooled_feature(prev).as_slice(), pooled_feature(current).as_slice())
            }
        }
    }

    /// Surprise of `current`. The first frame of a stream (`prev == None`) scores 0.
    pub fn score(&self, prev: Option<&LatentFrame>, current: &LatentFrame) -> Result<f64> {
        match prev {
            None => Ok(0.0),
            Some(p) => {
                if current.timestamp != p.timestamp + 1 {
                    return Err(Error::OutOfOrder {
                        expected: p.timestamp + 1,
                        actual: current.timestamp,
                    });
                }
                self.score_grids(&p.grid, &current.grid)
            }
        }
    }
}

/// Streams frames through an estimator, remembering only the previous grid.
#[derive(Clone, Debug)]
pub struct SurpriseTracker {
    estimator: SurpriseEstimator,
    prev: Option<(u64, TokenGrid)>,
}

impl SurpriseTracker {
    pub fn new(estimator: SurpriseEstimator) -> Self {
        Self { estimator, prev: None }
    }

    pub fn estimator(&self) -> &SurpriseEstimator {
        &self.estimator
    }

    pub fn observe(&mut self, frame: &LatentFrame) -> Result<f64> {
        let s = match &self.prev {
            None => 0.0,
            Some((ts, grid)) => {
                if frame.timestamp != ts + 1 {
                    return Err(Error::OutOfOrder {
                        expected: ts + 1,
                        actual: frame.timestamp,
                    });
                }
                self.estimator.score_grids(grid, &frame.grid)?
            }
        };
        self.prev = Some((frame.timestamp, frame.grid.clone()));
        Ok(s)
    }
}

/// Scores every frame of a stream.
pub fn score_stream<'a>(estimator: &SurpriseEstimator, frames: impl IntoIterator<Item = &'a LatentFrame>) -> Result<Vec<f64>> {
    let mut tracker = SurpriseTracker::new(estimator.clone());
    frames.into_iter().map(|f| tracker.observe(f)).collect()
}
