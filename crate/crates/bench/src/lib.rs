//! Fixtures shared by the benchmarks.

use predsense_core::simulator::{SceneSpec, StreamGenerator, StreamSpec};
use predsense_core::LatentFrame;

/// A stream of `frames` frames cut into 120-frame scenes.
pub fn scene_stream(frames: u64, dim: usize, tokens_per_frame: usize) -> StreamSpec {
    let scenes = (0..frames.div_ceil(120))
        .map(|i| SceneSpec {
            duration_frames: 120.min(frames - i * 120),
            anchor_distance: if i == 0 { 0.0 } else { 1.0 },
            location: format!("room{}", i % 4),
            objects: vec![],
        })
        .collect();
    StreamSpec {
        seed: 7,
        dim,
        tokens_per_frame,
        scenes,
        needle_offset: 0.0,
        noise: 0.2,
        drift_rate: 0.0,
        token_spread: 0.3,
        needles: vec![],
    }
}

pub fn frames(frames: u64, dim: usize, tokens_per_frame: usize) -> Vec<LatentFrame> {
    StreamGenerator::new(scene_stream(frames, dim, tokens_per_frame))
        .expect("fixture spec is valid")
        .collect()
}
