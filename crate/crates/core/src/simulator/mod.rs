//! Deterministic synthetic latent streams with ground truth.
//!
//! A stream is a sequence of scenes. Each scene has a unit-norm anchor and a
//! fixed per-token layout; frames rotate the scene content by `drift_rate`
//! radians per frame and add Gaussian noise. Consecutive anchors sit at a
//! configured Euclidean distance, which makes scene entries surprising.
//! Needle frames add a label-specific offset to every token.

mod stream;
mod suite;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use stream::{
    brute_force_count, generate_stream, needle_direction, needle_embedding, NeedleSpec, NeedleTruth, ObjectSpec, ObjectTruth, SceneSpec,
    StreamGenerator, StreamSpec, StreamTruth,
};
pub use suite::{
    build_count_suite, build_recall_suite, check_disjoint_seeds, query_timestamps, CountSuiteConfig, CountTask, ManifestEntry,
    RecallSuiteConfig, RecallTask, Split, SuiteManifest, LOCATIONS,
};

/// Hex SHA-256 of any serializable value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("config serializes")))
}
