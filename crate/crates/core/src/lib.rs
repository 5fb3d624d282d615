//! Predictive sensing over unbounded latent frame streams.
//!
//! A next-frame predictor turns every incoming frame into a surprise score.
//! The score drives two consumers:
//!
//! * [`memory`]: a sensory window, a token-budgeted long-term store that
//!   compresses unsurprising frames and forgets the least surprising ones, and
//!   query-time top-K retrieval.
//! * [`segmentation`]: an event loop that cuts the stream at surprising frames,
//!   answers each segment and sums the answers.
//!
//! [`simulator`] produces deterministic synthetic streams and tasks with full
//! ground truth, and [`harness`] runs the experiments and writes reports.

pub mod error;
pub mod harness;
pub mod memory;
pub mod predictor;
pub mod segmentation;
pub mod simulator;
pub mod stream_io;
pub mod types;
pub mod vector;

pub use error::{Error, Result};
pub use types::{FeatureVector, FrameAnnotation, LatentFrame, NeedleMark, ObjectSighting, TokenGrid};
pub use vector::{cosine_distance, cosine_similarity, grid_surprise, mean_pool_pairs, pooled_feature};
