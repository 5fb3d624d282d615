use std::borrow::Borrow;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::memory::{match_option, recovered_sequence, RecallAnswer};
use crate::segmentation::SegmentAnswerer;
use crate::types::{FrameAnnotation, LatentFrame};

/// Annotations of the last `window` frames, oldest first.
fn last_window<I>(frames: I, window: usize) -> Result<VecDeque<(u64, FrameAnnotation)>>
where
    I: IntoIterator,
    I::Item: Borrow<LatentFrame>,
{
    if window == 0 {
        return Err(Error::InvalidConfig("fixed window must hold at least one frame".into()));
    }
    let mut buf = VecDeque::with_capacity(window + 1);
    for f in frames {
        let f = f.borrow();
        buf.push_back((f.timestamp, f.annotation.clone()));
        if buf.len() > window {
            buf.pop_front();
        }
    }
    Ok(buf)
}

/// Answers a counting question from the last `window` frames only.
pub fn fixed_window_count<A, I>(frames: I, window: usize, answerer: &A) -> Result<u64>
where
    A: SegmentAnswerer,
    I: IntoIterator,
    I::Item: Borrow<LatentFrame>,
{
    let buf = last_window(frames, window)?;
    Ok(answerer.answer(buf.iter().map(|(_, a)| a)))
}

/// Answers a recall question from the needles visible in the last `window` frames.
pub fn fixed_window_recall<I>(frames: I, window: usize, label: &str, options: &[Vec<String>]) -> Result<RecallAnswer>
where
    I: IntoIterator,
    I::Item: Borrow<LatentFrame>,
{
    let buf = last_window(frames, window)?;
    match_option(recovered_sequence(buf.iter().map(|(t, a)| (*t, a)), label), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::OracleCounter;
    use crate::simulator::{generate_stream, ObjectSpec, SceneSpec, StreamSpec};
    use std::collections::HashSet;

    fn three_scene_stream() -> Vec<LatentFrame> {
        let scene = |len, first_id: u32, n: u32| SceneSpec {
            duration_frames: len,
            anchor_distance: 1.0,
            location: "hall".into(),
            objects: (0..n)
                .map(|k| ObjectSpec {
                    object_id: first_id + k,
                    category: "chair".into(),
                    windows: vec![(k as u64 % len, len)],
                })
                .collect(),
        };
        let spec = StreamSpec {
            seed: 1,
            dim: 4,
            tokens_per_frame: 2,
            scenes: vec![scene(10, 0, 3), scene(10, 10, 5), scene(10, 20, 2)],
            needle_offset: 0.0,
            noise: 0.1,
            drift_rate: 0.0,
            token_spread: 0.3,
            needles: vec![],
        };
        generate_stream(&spec).unwrap().0
    }

    #[test]
    fn whole_stream_window_equals_oracle() {
        let frames = three_scene_stream();
        let c = OracleCounter::new("chair");
        assert_eq!(fixed_window_count(&frames, 30, &c).unwrap(), 10);
        assert_eq!(fixed_window_count(&frames, 1000, &c).unwrap(), 10);
    }

    #[test]
    fn single_frame_window_is_bounded_by_frame_count() {
        let frames = three_scene_stream();
        let c = OracleCounter::new("chair");
        let per_frame_max = frames.iter().map(|f| c.answer([&f.annotation])).max().unwrap();
        assert!(fixed_window_count(&frames, 1, &c).unwrap() <= per_frame_max);
        assert!(fixed_window_count(&frames, 0, &c).is_err());
    }

    #[test]
    fn undercount_equals_out_of_window_objects() {
        let frames = three_scene_stream();
        let c = OracleCounter::new("chair");
        for window in [1, 5, 12, 25] {
            let inside: HashSet<u32> = frames[frames.len() - window..]
                .iter()
                .flat_map(|f| f.annotation.objects.iter().map(|o| o.id))
                .collect();
            let all: HashSet<u32> = frames.iter().flat_map(|f| f.annotation.objects.iter().map(|o| o.id)).collect();
            let missing = all.difference(&inside).count() as u64;
            assert_eq!(10 - fixed_window_count(&frames, window, &c).unwrap(), missing);
        }
    }
}
