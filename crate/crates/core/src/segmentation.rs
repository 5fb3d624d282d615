//! Surprise-driven event segmentation for cumulative counting.
//!
//! Frames pass through a sensory FIFO. When a frame leaves the window it joins
//! the current segment; if its surprise reaches the threshold, the segment
//! accumulated so far is answered, banked and cleared first, so the
//! surprising frame opens the next segment. The final answer is the sum of the
//! bank after the residual segment is flushed at the end of the stream.
//!
//! Segments store only frame annotations: the answerer reads nothing else.

use std::borrow::Borrow;
use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{SurpriseEstimator, SurpriseTracker};
use crate::types::{FrameAnnotation, LatentFrame};

/// Produces a non-negative answer for one segment of frames.
pub trait SegmentAnswerer {
    fn answer<'a, I>(&self, segment: I) -> u64
    where
        I: IntoIterator<Item = &'a FrameAnnotation>;
}

/// Counts distinct object ids of one category visible in the segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleCounter {
    pub category: String,
}

impl OracleCounter {
    pub fn new(category: impl Into<String>) -> Self {
        Self { category: category.into() }
    }
}

impl SegmentAnswerer for OracleCounter {
    fn answer<'a, I>(&self, segment: I) -> u64
    where
        I: IntoIterator<Item = &'a FrameAnnotation>,
    {
        let mut seen = HashSet::new();
        for a in segment {
            for o in &a.objects {
                if o.category == self.category {
                    seen.insert(o.id);
                }
            }
        }
        seen.len() as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub sensory_budget: usize,
    pub threshold: f64,
    /// A surprising frame only closes a segment holding at least this many frames.
    pub min_segment_len: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            sensory_budget: 16,
            threshold: 0.1,
            min_segment_len: 2,
        }
    }
}

/// One answered segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// Timestamp of the frame that triggered the flush (the first frame of the
    /// next segment), or one past the last frame for the end-of-stream flush.
    pub flush_timestamp: u64,
    pub start: u64,
    pub len: usize,
    pub answer: u64,
    /// Whether a surprising frame, rather than the end of the stream, closed it.
    pub boundary: bool,
}

/// Ordered per-segment answers, aggregated by summation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerBank {
    pub entries: Vec<SegmentRecord>,
}

impl AnswerBank {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.answer).sum()
    }

    /// Flush timestamps caused by surprise, i.e. the predicted event boundaries.
    pub fn boundaries(&self) -> Vec<u64> {
        self.entries.iter().filter(|e| e.boundary).map(|e| e.flush_timestamp).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "flush_timestamp,segment_length,segment_answer")?;
        for e in &self.entries {
            writeln!(out, "{},{},{}", e.flush_timestamp, e.len, e.answer)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Pending {
    timestamp: u64,
    annotation: FrameAnnotation,
    surprise: f64,
}

/// Streaming segmentation state for one stream.
#[derive(Clone, Debug)]
pub struct EventLoop<A> {
    config: SegmentConfig,
    answerer: A,
    tracker: Option<SurpriseTracker>,
    sensory: VecDeque<Pending>,
    segment: Vec<FrameAnnotation>,
    segment_start: u64,
    bank: AnswerBank,
    last_timestamp: Option<u64>,
}

impl<A: SegmentAnswerer> EventLoop<A> {
    /// A loop fed with precomputed scores via [`push_scored`](Self::push_scored).
    pub fn new(config: SegmentConfig, answerer: A) -> Result<Self> {
        if config.sensory_budget == 0 {
            return Err(Error::InvalidConfig("sensory_budget must be at least 1".into()));
        }
        if config.threshold.is_nan() {
            return Err(Error::InvalidConfig("threshold must be a number".into()));
        }
        Ok(Self {
            sensory: VecDeque::with_capacity(config.sensory_budget + 1),
            config,
            answerer,
            tracker: None,
            segment: Vec::new(),
            segment_start: 0,
            bank: AnswerBank::default(),
            last_timestamp: None,
        })
    }

    pub fn with_estimator(config: SegmentConfig, answerer: A, estimator: SurpriseEstimator) -> Result<Self> {
        let mut l = Self::new(config, answerer)?;
        l.tracker = Some(SurpriseTracker::new(estimator));
        Ok(l)
    }

    pub fn bank(&self) -> &AnswerBank {
        &self.bank
    }

    /// Frames admitted to the current segment so far.
    pub fn segment_len(&self) -> usize {
        self.segment.len()
    }

    pub fn sensory_len(&self) -> usize {
        self.sensory.len()
    }

    /// Scores and ingests a frame. Returns its surprise.
    pub fn push(&mut self, frame: &LatentFrame) -> Result<f64> {
        let tracker = self
            .tracker
            .as_mut()
            .ok_or_else(|| Error::InvalidConfig("event loop has no surprise estimator attached".into()))?;
        let s = tracker.observe(frame)?;
        self.push_scored(frame.timestamp, frame.annotation.clone(), s)?;
        Ok(s)
    }

    pub fn push_scored(&mut self, timestamp: u64, annotation: FrameAnnotation, surprise: f64) -> Result<()> {
        if let Some(last) = self.last_timestamp {
            if timestamp != last + 1 {
                return Err(Error::OutOfOrder {
                    expected: last + 1,
                    actual: timestamp,
                });
            }
        }
        self.last_timestamp = Some(timestamp);
        self.sensory.push_back(Pending {
            timestamp,
            annotation,
            surprise,
        });
        while self.sensory.len() > self.config.sensory_budget {
            let p = self.sensory.pop_front().expect("non-empty");
            self.admit(p);
        }
        Ok(())
    }

    fn closes_segment(&self, surprise: f64, held: usize) -> bool {
        surprise >= self.config.threshold && held >= self.config.min_segment_len.max(1)
    }

    fn admit(&mut self, p: Pending) {
        if self.closes_segment(p.surprise, self.segment.len()) {
            self.flush(p.timestamp, true);
        }
        if self.segment.is_empty() {
            self.segment_start = p.timestamp;
        }
        self.segment.push(p.annotation);
    }

    fn flush(&mut self, flush_timestamp: u64, boundary: bool) {
        if self.segment.is_empty() {
            return;
        }
        let answer = self.answerer.answer(&self.segment);
        self.bank.entries.push(SegmentRecord {
            flush_timestamp,
            start: self.segment_start,
            len: self.segment.len(),
            answer,
            boundary,
        });
        self.segment.clear();
    }

    /// Running answer without mutating state: the banked sum plus the answers
    /// the remaining frames would produce if the stream ended now.
    pub fn peek(&self) -> u64 {
        let mut total = self.bank.total();
        let mut seg: Vec<&FrameAnnotation> = self.segment.iter().collect();
        for p in &self.sensory {
            if self.closes_segment(p.surprise, seg.len()) {
                total += self.answerer.answer(seg.drain(..));
            }
            seg.push(&p.annotation);
        }
        total + self.answerer.answer(seg)
    }

    /// Drains the sensory window through the segment rule, flushes the residual
    /// segment and returns the bank total.
    pub fn finish(&mut self) -> u64 {
        while let Some(p) = self.sensory.pop_front() {
            self.admit(p);
        }
        let end = self.last_timestamp.map_or(0, |t| t + 1);
        self.flush(end, false);
        self.bank.total()
    }

    /// Runs frames to completion, recording the running answer after each
    /// timestamp in `queries` (sorted ascending). Returns the running answers
    /// and the final count.
    pub fn run_with_queries<I>(&mut self, frames: I, queries: &[u64]) -> Result<(Vec<(u64, u64)>, u64)>
    where
        I: IntoIterator,
        I::Item: Borrow<LatentFrame>,
    {
        check_sorted(queries)?;
        let mut answers = Vec::with_capacity(queries.len());
        let mut next = 0;
        for f in frames {
            let f = f.borrow();
            self.push(f)?;
            while next < queries.len() && queries[next] == f.timestamp {
                answers.push((f.timestamp, self.peek()));
                next += 1;
            }
            if next < queries.len() && queries[next] < f.timestamp {
                return Err(Error::InvalidInput(format!("query {} precedes the first frame", queries[next])));
            }
        }
        if next < queries.len() {
            return Err(Error::QueryOutOfRange {
                timestamp: queries[next],
                last: self.last_timestamp,
            });
        }
        Ok((answers, self.finish()))
    }
}

fn check_sorted(queries: &[u64]) -> Result<()> {
    if queries.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("query timestamps must be sorted".into()));
    }
    Ok(())
}

/// Segments `frames` with `estimator` and returns the summed answer.
pub fn process_stream<A, I>(config: SegmentConfig, answerer: A, estimator: SurpriseEstimator, frames: I) -> Result<(u64, AnswerBank)>
where
    A: SegmentAnswerer,
    I: IntoIterator,
    I::Item: Borrow<LatentFrame>,
{
    let mut l = EventLoop::with_estimator(config, answerer, estimator)?;
    for f in frames {
        l.push(f.borrow())?;
    }
    let total = l.finish();
    Ok((total, l.bank))
}

/// Upper-bound run that flushes exactly where the annotated scene changes.
pub fn gt_segmentation_run<'a, A: SegmentAnswerer>(annotations: impl IntoIterator<Item = &'a FrameAnnotation>, answerer: &A) -> u64 {
    let mut total = 0;
    let mut seg: Vec<&FrameAnnotation> = Vec::new();
    for a in annotations {
        if seg.last().is_some_and(|l| l.scene_id != a.scene_id) {
            total += answerer.answer(seg.drain(..));
        }
        seg.push(a);
    }
    total + answerer.answer(seg)
}

/// For each query timestamp, the number of distinct `category` objects first
/// seen at or before it. Unknown categories count 0.
pub fn streaming_ground_truth<'a>(
    frames: impl IntoIterator<Item = (u64, &'a FrameAnnotation)>,
    category: &str,
    timestamps: &[u64],
) -> Result<Vec<u64>> {
    check_sorted(timestamps)?;
    let mut first: HashMap<u32, u64> = HashMap::new();
    for (ts, a) in frames {
        for o in a.objects.iter().filter(|o| o.category == category) {
            first.entry(o.id).or_insert(ts);
        }
    }
    let mut firsts: Vec<u64> = first.into_values().collect();
    firsts.sort_unstable();
    Ok(timestamps.iter().map(|&t| firsts.partition_point(|&f| f <= t) as u64).collect())
}
