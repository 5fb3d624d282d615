use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::SurpriseEstimator;
use crate::types::{FeatureVector, LatentFrame};
use crate::vector::mean_pool_pairs;

use super::long_term::{retrieve_top_k, ConsolidationStrategy, LongTermMemory, MemoryItem, WorkingMemory};
use super::recall::{match_option, recovered_sequence, RecallAnswer};

/// Engine parameters. Budgets are in frames (sensory) and tokens (long-term).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub sensory_budget: usize,
    pub token_budget: usize,
    /// Frames leaving the sensory window with surprise below this are compressed.
    pub threshold: f64,
    pub top_k: usize,
    pub strategy: ConsolidationStrategy,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            sensory_budget: 16,
            token_budget: 32_768,
            threshold: 0.1,
            top_k: 8,
            strategy: ConsolidationStrategy::ForgetLeastSurprise,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensory_budget == 0 {
            return Err(Error::InvalidConfig("sensory_budget must be at least 1".into()));
        }
        if self.token_budget == 0 || self.top_k == 0 {
            return Err(Error::InvalidConfig("token_budget and top_k must be positive".into()));
        }
        if self.threshold.is_nan() {
            return Err(Error::InvalidConfig("threshold must be a number".into()));
        }
        Ok(())
    }
}

/// FIFO window of the most recent frames and their surprise scores.
#[derive(Clone, Debug, Default)]
pub struct SensoryBuffer {
    items: VecDeque<(LatentFrame, f64)>,
    budget: usize,
    tokens: usize,
}

impl SensoryBuffer {
    pub fn new(budget: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(budget + 1),
            budget,
            tokens: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn token_total(&self) -> usize {
        self.tokens
    }

    pub fn newest(&self) -> Option<&LatentFrame> {
        self.items.back().map(|(f, _)| f)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(LatentFrame, f64)> {
        self.items.iter()
    }

    fn push(&mut self, frame: LatentFrame, surprise: f64) {
        self.tokens += frame.grid.len();
        self.items.push_back((frame, surprise));
    }

    fn pop_overflow(&mut self) -> Option<(LatentFrame, f64)> {
        if self.items.len() <= self.budget {
            return None;
        }
        let out = self.items.pop_front()?;
        self.tokens -= out.0.grid.len();
        Some(out)
    }
}

/// One row of the memory trace: a frame as it leaves the sensory window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp: u64,
    pub surprise: f64,
    pub compressed: bool,
    pub long_term_tokens: usize,
}

/// Streaming state machine: sensory window, surprise-gated compression into
/// budgeted long-term memory, and query-time retrieval.
#[derive(Clone, Debug)]
pub struct MemoryEngine {
    config: MemoryConfig,
    estimator: Option<SurpriseEstimator>,
    sensory: SensoryBuffer,
    long_term: LongTermMemory,
    last_timestamp: Option<u64>,
    peak_tokens: usize,
    trace: Option<Vec<TraceRow>>,
}

impl MemoryEngine {
    pub fn new(config: MemoryConfig, estimator: SurpriseEstimator) -> Result<Self> {
        let mut e = Self::without_estimator(config)?;
        e.estimator = Some(estimator);
        Ok(e)
    }

    /// An engine fed with precomputed surprise scores via [`ingest_scored`](Self::ingest_scored).
    pub fn without_estimator(config: MemoryConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            sensory: SensoryBuffer::new(config.sensory_budget),
            long_term: LongTermMemory::new(config.token_budget, config.strategy),
            config,
            estimator: None,
            last_timestamp: None,
            peak_tokens: 0,
            trace: None,
        })
    }

    /// Records a [`TraceRow`] for every frame moved to long-term memory.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn sensory(&self) -> &SensoryBuffer {
        &self.sensory
    }

    pub fn long_term(&self) -> &LongTermMemory {
        &self.long_term
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Largest sensory + long-term token total seen so far, including the
    /// transient state right before consolidation.
    pub fn peak_token_count(&self) -> usize {
        self.peak_tokens
    }

    pub fn current_token_count(&self) -> usize {
        self.sensory.token_total() + self.long_term.token_total()
    }

    /// Scores `frame` against the newest sensory frame and ingests it.
    pub fn ingest(&mut self, frame: LatentFrame) -> Result<f64> {
        let est = self
            .estimator
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("engine has no surprise estimator attached".into()))?;
        self.check_order(frame.timestamp)?;
        let s = est.score(self.sensory.newest(), &frame)?;
        self.ingest_scored(frame, s)?;
        Ok(s)
    }

    fn check_order(&self, ts: u64) -> Result<()> {
        match self.last_timestamp {
            Some(last) if ts != last + 1 => Err(Error::OutOfOrder {
                expected: last + 1,
                actual: ts,
            }),
            _ => Ok(()),
        }
    }

    fn observe_peak(&mut self, extra: usize) {
        self.peak_tokens = self.peak_tokens.max(self.current_token_count() + extra);
    }

    /// Ingests a frame whose surprise has already been computed.
    pub fn ingest_scored(&mut self, frame: LatentFrame, surprise: f64) -> Result<()> {
        self.check_order(frame.timestamp)?;
        if !(surprise >= 0.0) {
            return Err(Error::InvalidInput(format!("surprise must be non-negative, got {surprise}")));
        }
        self.last_timestamp = Some(frame.timestamp);
        self.sensory.push(frame, surprise);
        self.observe_peak(0);
        while let Some((old, s)) = self.sensory.pop_overflow() {
            let compress = s < self.config.threshold && old.grid.len() >= 2;
            let tokens = if compress { mean_pool_pairs(&old.grid)? } else { old.grid };
            let item = MemoryItem::new(old.timestamp, tokens, s, compress, old.annotation);
            self.long_term.push(item)?;
            self.observe_peak(0);
            if self.long_term.over_budget() {
                self.long_term.consolidate()?;
            }
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRow {
                    timestamp: old.timestamp,
                    surprise: s,
                    compressed: compress,
                    long_term_tokens: self.long_term.token_total(),
                });
            }
        }
        Ok(())
    }

    /// Top-`k` retrieval over long-term memory only.
    pub fn retrieve(&self, query: &FeatureVector, k: usize) -> Result<WorkingMemory> {
        self.long_term.retrieve(query, k)
    }

    /// Top-`k` retrieval over long-term memory and the frames still in the
    /// sensory window (treated as uncompressed items).
    pub fn retrieve_with_sensory(&self, query: &FeatureVector, k: usize) -> Result<WorkingMemory> {
        let sensory: Vec<MemoryItem> = self
            .sensory
            .iter()
            .map(|(f, s)| MemoryItem::new(f.timestamp, f.grid.clone(), *s, false, f.annotation.clone()))
            .collect();
        retrieve_top_k(self.long_term.items().iter().chain(sensory.iter()), query, k)
    }

    /// Answers a sequential-recall question: retrieves `k` frames for `query`,
    /// reads the `label` needles among them in timestamp order and picks the
    /// matching option.
    pub fn answer_recall(&self, query: &FeatureVector, label: &str, options: &[Vec<String>], k: usize) -> Result<RecallAnswer> {
        if options.is_empty() {
            return Err(Error::InvalidInput("recall question has no candidate options".into()));
        }
        let wm = self.retrieve_with_sensory(query, k)?;
        let recovered = recovered_sequence(wm.items.iter().map(|it| (it.timestamp, &it.annotation)), label);
        match_option(recovered, options)
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_trace_csv(path, self.trace())
    }
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "timestamp,surprise,compressed,long_term_tokens")?;
    for r in rows {
        writeln!(out, "{},{:.6},{},{}", r.timestamp, r.surprise, r.compressed, r.long_term_tokens)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorModel;
    use crate::types::{FrameAnnotation, TokenGrid};

    fn frame(t: u64, tokens: usize) -> LatentFrame {
        LatentFrame {
            timestamp: t,
            grid: TokenGrid::new(2, [1.0f32, 0.5].repeat(tokens)).unwrap(),
            annotation: FrameAnnotation::default(),
        }
    }

    fn engine(sensory: usize, tokens: usize, threshold: f64) -> MemoryEngine {
        let cfg = MemoryConfig {
            sensory_budget: sensory,
            token_budget: tokens,
            threshold,
            ..Default::default()
        };
        MemoryEngine::new(cfg, SurpriseEstimator::prediction_error(PredictorModel::last_frame(2))).unwrap()
    }

    #[test]
    fn short_stream_stays_sensory() {
        let mut e = engine(16, 1024, 0.5);
        for t in 0..10 {
            e.ingest(frame(t, 4)).unwrap();
        }
        assert!(e.long_term().is_empty());
        assert_eq!(e.sensory().len(), 10);
    }

    #[test]
    fn step_through_two_frame_window() {
        let mut e = engine(2, 1024, 0.1);
        for t in 0..3 {
            assert_eq!(e.ingest(frame(t, 4)).unwrap(), 0.0);
        }
        assert_eq!(e.long_term().len(), 1);
        let it = &e.long_term().items()[0];
        assert!(it.compressed);
        assert_eq!(it.token_count(), 2);
        assert_eq!(it.timestamp, 0);
    }

    #[test]
    fn surprise_at_threshold_is_kept_whole() {
        let mut e = MemoryEngine::without_estimator(MemoryConfig {
            sensory_budget: 1,
            token_budget: 1024,
            threshold: 0.3,
            ..Default::default()
        })
        .unwrap();
        e.ingest_scored(frame(0, 4), 0.3).unwrap();
        e.ingest_scored(frame(1, 4), 0.29).unwrap();
        e.ingest_scored(frame(2, 4), 0.0).unwrap();
        let items = e.long_term().items();
        assert!(!items[0].compressed && items[0].token_count() == 4);
        assert!(items[1].compressed && items[1].token_count() == 2);
    }

    #[test]
    fn out_of_order_and_missing_estimator() {
        let mut e = engine(2, 64, 0.1);
        e.ingest(frame(0, 2)).unwrap();
        assert!(matches!(e.ingest(frame(2, 2)), Err(Error::OutOfOrder { expected: 1, actual: 2 })));
        let mut bare = MemoryEngine::without_estimator(MemoryConfig::default()).unwrap();
        assert!(bare.ingest(frame(0, 2)).is_err());
        assert!(bare.ingest_scored(frame(0, 2), -1.0).is_err());
    }

    #[test]
    fn peak_respects_budget_arithmetic() {
        assert_eq!(engine(4, 16, 0.1).peak_token_count(), 0);
        let (bs, bl, tf) = (4usize, 24usize, 4usize);
        let mut e = engine(bs, bl, 0.0).with_trace();
        for t in 0..200 {
            e.ingest(frame(t, tf)).unwrap();
            assert!(e.sensory().len() <= bs);
            assert!(e.long_term().token_total() <= bl);
        }
        assert_eq!(e.peak_token_count(), bs * tf + bl + tf);
        assert_eq!(e.trace().len(), 200 - bs);
    }
}
