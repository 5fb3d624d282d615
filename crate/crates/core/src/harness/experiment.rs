use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{fixed_window_count, fixed_window_recall};
use super::metrics::{auroc, match_boundaries, mean_sd, mra, pearson, BoundaryCounts, Prf};
use super::sweep::{select_tau, SweepPoint};
use crate::error::{Error, Result};
use crate::memory::{write_trace_csv, MemoryConfig, MemoryEngine, RecallAnswer, TraceRow};
use crate::predictor::{load_checkpoint, save_checkpoint, score_stream, train, write_loss_history, PredictorModel, PredictorVariant, SurpriseEstimator, TrainingConfig};
use crate::segmentation::{gt_segmentation_run, AnswerBank, EventLoop, OracleCounter, SegmentConfig};
use crate::simulator::{
    build_count_suite, build_recall_suite, check_disjoint_seeds, config_hash, generate_stream, needle_embedding, CountSuiteConfig, CountTask,
    RecallSuiteConfig, RecallTask, Split, StreamGenerator, StreamSpec, StreamTruth, SuiteManifest,
};
use crate::stream_io::{StreamEncoding, StreamHeader, StreamWriter};
use crate::types::LatentFrame;

/// Environment variable naming the root directory for experiment outputs.
pub const OUTPUT_ENV: &str = "PREDSENSE_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Recall,
    Count,
    Drift,
}

impl fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteKind::Recall => "recall",
            SuiteKind::Count => "count",
            SuiteKind::Drift => "drift",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SurpriseMemory,
    AdjacentMemory,
    SurpriseSeg,
    AdjacentSeg,
    GtSeg,
    FixedWindow,
}

impl Method {
    pub const RECALL: [Method; 3] = [Method::SurpriseMemory, Method::AdjacentMemory, Method::FixedWindow];
    pub const COUNT: [Method; 4] = [Method::SurpriseSeg, Method::AdjacentSeg, Method::GtSeg, Method::FixedWindow];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SurpriseMemory => "surprise_memory",
            Method::AdjacentMemory => "adjacent_memory",
            Method::SurpriseSeg => "surprise_seg",
            Method::AdjacentSeg => "adjacent_seg",
            Method::GtSeg => "gt_seg",
            Method::FixedWindow => "fixed_window",
        }
    }

    fn uses_prediction_error(self) -> bool {
        matches!(self, Method::SurpriseMemory | Method::SurpriseSeg)
    }

    fn is_swept(self) -> bool {
        !matches!(self, Method::GtSeg | Method::FixedWindow)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSetup {
    pub variant: PredictorVariant,
    pub hidden: usize,
    pub train_streams: usize,
    pub train_duration: u64,
    /// Directory holding `predictor_<suite>.ckpt` files to load instead of training.
    pub checkpoint_dir: Option<PathBuf>,
    pub training: TrainingConfig,
}

impl Default for PredictorSetup {
    fn default() -> Self {
        Self {
            variant: PredictorVariant::Linear,
            hidden: 64,
            train_streams: 8,
            train_duration: 600,
            checkpoint_dir: None,
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub tau_grid: Vec<f64>,
    pub fixed_window: usize,
    pub boundary_tolerance: u64,
    pub tune_tasks_per_duration: usize,
    pub memory: MemoryConfig,
    pub segment: SegmentConfig,
    pub predictor: PredictorSetup,
    pub recall: Option<RecallSuiteConfig>,
    pub count: Option<CountSuiteConfig>,
    pub drift: Option<CountSuiteConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            seed: 0,
            output_dir: None,
            tau_grid: vec![0.02, 0.04, 0.06, 0.08, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6],
            fixed_window: 600,
            boundary_tolerance: 2,
            tune_tasks_per_duration: 10,
            memory: MemoryConfig {
                token_budget: 4096,
                ..MemoryConfig::default()
            },
            segment: SegmentConfig::default(),
            predictor: PredictorSetup::default(),
            recall: Some(RecallSuiteConfig::default()),
            count: Some(CountSuiteConfig::default()),
            drift: Some(CountSuiteConfig::drift()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidConfig("tau_grid must be non-empty and finite".into()));
        }
        if self.fixed_window == 0 || self.tune_tasks_per_duration == 0 {
            return Err(Error::InvalidConfig("fixed_window and tune_tasks_per_duration must be positive".into()));
        }
        if self.predictor.train_streams == 0 || self.predictor.train_duration < 2 {
            return Err(Error::InvalidConfig("predictor needs at least one training stream of two frames".into()));
        }
        self.memory.validate()?;
        self.predictor.training.validate()?;
        Ok(())
    }

    pub fn suites(&self) -> Vec<SuiteKind> {
        let mut out = Vec::new();
        if self.recall.is_some() {
            out.push(SuiteKind::Recall);
        }
        if self.count.is_some() {
            out.push(SuiteKind::Count);
        }
        if self.drift.is_some() {
            out.push(SuiteKind::Drift);
        }
        out
    }

    fn count_config(&self, kind: SuiteKind) -> Option<&CountSuiteConfig> {
        match kind {
            SuiteKind::Count => self.count.as_ref(),
            SuiteKind::Drift => self.drift.as_ref(),
            SuiteKind::Recall => None,
        }
    }

    /// `$PREDSENSE_OUT/<name>` when the variable is set, else `output_dir`,
    /// else `predsense-out/<name>`.
    pub fn resolve_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.name),
            None => self.output_dir.clone().unwrap_or_else(|| PathBuf::from("predsense-out").join(&self.name)),
        }
    }
}

/// Tasks of one suite and split.
#[derive(Clone, Debug)]
pub enum SuiteTasks {
    Recall(Vec<RecallTask>),
    Count(Vec<CountTask>),
}

impl SuiteTasks {
    pub fn specs(&self) -> Vec<&StreamSpec> {
        match self {
            SuiteTasks::Recall(t) => t.iter().map(|t| &t.spec).collect(),
            SuiteTasks::Count(t) => t.iter().map(|t| &t.spec).collect(),
        }
    }

    pub fn manifest(&self, cfg: &ExperimentConfig, kind: SuiteKind, split: Split) -> SuiteManifest {
        let mut m = match self {
            SuiteTasks::Recall(t) => SuiteManifest::for_recall(cfg.recall.as_ref().expect("recall suite configured"), split, t),
            SuiteTasks::Count(t) => SuiteManifest::for_count(cfg.count_config(kind).expect("count suite configured"), split, t),
        };
        m.suite = kind.to_string();
        m
    }
}

/// Builds the tasks of `kind` for `split`. Training and tuning splits use
/// their own sizes from the predictor setup and `tune_tasks_per_duration`.
pub fn build_suite(cfg: &ExperimentConfig, kind: SuiteKind, split: Split) -> Result<SuiteTasks> {
    let missing = || Error::InvalidConfig(format!("suite {kind} is not configured"));
    let resize = |durations: &mut Vec<u64>, tasks: &mut usize| match split {
        Split::Train => {
            *durations = vec![cfg.predictor.train_duration];
            *tasks = cfg.predictor.train_streams;
        }
        Split::Tune => *tasks = cfg.tune_tasks_per_duration,
        Split::Test => {}
    };
    match kind {
        SuiteKind::Recall => {
            let mut c = cfg.recall.clone().ok_or_else(missing)?;
            resize(&mut c.durations, &mut c.tasks_per_duration);
            Ok(SuiteTasks::Recall(build_recall_suite(&c, split)?))
        }
        SuiteKind::Count | SuiteKind::Drift => {
            let mut c = cfg.count_config(kind).cloned().ok_or_else(missing)?;
            resize(&mut c.durations, &mut c.tasks_per_duration);
            Ok(SuiteTasks::Count(build_count_suite(&c, split)?))
        }
    }
}

fn checkpoint_name(kind: SuiteKind) -> String {
    format!("predictor_{kind}.ckpt")
}

/// Trains the next-frame predictor for a suite on its training split, or loads
/// it from `predictor.checkpoint_dir`. Returns the model and its loss history.
pub fn prepare_predictor(cfg: &ExperimentConfig, kind: SuiteKind) -> Result<(PredictorModel, Vec<f64>)> {
    if let Some(dir) = &cfg.predictor.checkpoint_dir {
        let (_, model) = load_checkpoint(dir.join(checkpoint_name(kind)))?;
        return Ok((model, Vec::new()));
    }
    let tasks = build_suite(cfg, kind, Split::Train)?;
    let streams: Vec<Vec<LatentFrame>> = tasks
        .specs()
        .into_par_iter()
        .map(|s| Ok(generate_stream(s)?.0))
        .collect::<Result<_>>()?;
    let dim = streams[0][0].grid.dim();
    let model = PredictorModel::init(cfg.predictor.variant, dim, cfg.predictor.hidden, cfg.seed)?;
    train(model, &streams, &cfg.predictor.training)
}

struct Scored {
    frames: Vec<LatentFrame>,
    truth: StreamTruth,
    prediction: Vec<f64>,
    adjacent: Vec<f64>,
}

impl Scored {
    fn new(spec: &StreamSpec, model: &PredictorModel) -> Result<Self> {
        let (frames, truth) = generate_stream(spec)?;
        let prediction = score_stream(&SurpriseEstimator::prediction_error(model.clone()), &frames)?;
        let adjacent = score_stream(&SurpriseEstimator::AdjacentSimilarity, &frames)?;
        Ok(Self {
            frames,
            truth,
            prediction,
            adjacent,
        })
    }

    fn scores(&self, method: Method) -> &[f64] {
        if method.uses_prediction_error() {
            &self.prediction
        } else {
            &self.adjacent
        }
    }
}

struct SegmentRun {
    total: u64,
    bank: AnswerBank,
    streaming: Vec<u64>,
}

fn run_segments(frames: &[LatentFrame], scores: &[f64], seg: SegmentConfig, category: &str, queries: &[u64]) -> Result<SegmentRun> {
    let mut l = EventLoop::new(seg, OracleCounter::new(category))?;
    let mut streaming = Vec::with_capacity(queries.len());
    let mut next = 0;
    for (f, s) in frames.iter().zip(scores) {
        l.push_scored(f.timestamp, f.annotation.clone(), *s)?;
        while next < queries.len() && queries[next] == f.timestamp {
            streaming.push(l.peek());
            next += 1;
        }
    }
    let total = l.finish();
    Ok(SegmentRun {
        total,
        bank: l.bank().clone(),
        streaming,
    })
}

struct MemoryRun {
    answer: RecallAnswer,
    peak: usize,
    trace: Vec<TraceRow>,
}

fn run_memory(frames: &[LatentFrame], scores: &[f64], mem: MemoryConfig, task: &RecallTask, trace: bool) -> Result<MemoryRun> {
    let top_k = mem.top_k;
    let mut engine = MemoryEngine::without_estimator(mem)?;
    if trace {
        engine = engine.with_trace();
    }
    for (f, s) in frames.iter().zip(scores) {
        engine.ingest_scored(f.clone(), *s)?;
    }
    let query = needle_embedding(&task.needle_label, task.spec.dim);
    let answer = engine.answer_recall(&query, &task.needle_label, &task.options, top_k)?;
    Ok(MemoryRun {
        answer,
        peak: engine.peak_token_count(),
        trace: engine.trace().to_vec(),
    })
}

/// One row of the threshold sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub suite: SuiteKind,
    pub method: Method,
    pub duration: u64,
    pub tau: f64,
    pub metric: f64,
}

/// Sweep results and the selected threshold per suite, method and duration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub selected: BTreeMap<(SuiteKind, Method, u64), f64>,
}

impl SweepTable {
    pub fn tau(&self, suite: SuiteKind, method: Method, duration: u64) -> Option<f64> {
        self.selected.get(&(suite, method, duration)).copied()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "suite,method,duration,tau,metric,selected")?;
        for r in &self.rows {
            let sel = self.tau(r.suite, r.method, r.duration) == Some(r.tau);
            writeln!(out, "{},{},{},{},{:.6},{}", r.suite, r.method, r.duration, r.tau, r.metric, u8::from(sel))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-task metric of a swept method at every threshold of the grid:
/// choice correctness for recall, MRA for counting.
fn tune_task_metrics(cfg: &ExperimentConfig, model: &PredictorModel, spec: &StreamSpec, recall: Option<&RecallTask>, count: Option<&CountTask>, methods: &[Method]) -> Result<Vec<Vec<f64>>> {
    let scored = Scored::new(spec, model)?;
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let scores = scored.scores(m);
        let mut row = Vec::with_capacity(cfg.tau_grid.len());
        for &tau in &cfg.tau_grid {
            let v = if let Some(task) = recall {
                let mem = MemoryConfig { threshold: tau, ..cfg.memory.clone() };
                let run = run_memory(&scored.frames, scores, mem, task, false)?;
                f64::from(u8::from(run.answer.option == task.correct_index))
            } else {
                let task = count.expect("count task");
                let seg = SegmentConfig { threshold: tau, ..cfg.segment.clone() };
                let run = run_segments(&scored.frames, scores, seg, &task.category, &[])?;
                mra(run.total, task.gt_total)?
            };
            row.push(v);
        }
        out.push(row);
    }
    Ok(out)
}

/// Selects τ per duration for every swept method of `kind` on the tuning split.
pub fn sweep_suite(cfg: &ExperimentConfig, kind: SuiteKind, model: &PredictorModel) -> Result<SweepTable> {
    let tasks = build_suite(cfg, kind, Split::Tune)?;
    let (methods, per_task): (Vec<Method>, Vec<(u64, Vec<Vec<f64>>)>) = match &tasks {
        SuiteTasks::Recall(t) => {
            let methods: Vec<Method> = Method::RECALL.into_iter().filter(|m| m.is_swept()).collect();
            let rows = t
                .par_iter()
                .map(|task| Ok((task.duration, tune_task_metrics(cfg, model, &task.spec, Some(task), None, &methods)?)))
                .collect::<Result<_>>()?;
            (methods, rows)
        }
        SuiteTasks::Count(t) => {
            let methods: Vec<Method> = Method::COUNT.into_iter().filter(|m| m.is_swept()).collect();
            let rows = t
                .par_iter()
                .map(|task| Ok((task.duration, tune_task_metrics(cfg, model, &task.spec, None, Some(task), &methods)?)))
                .collect::<Result<_>>()?;
            (methods, rows)
        }
    };
    let mut durations: Vec<u64> = per_task.iter().map(|p| p.0).collect();
    durations.dedup();
    let mut table = SweepTable::default();
    for (mi, &method) in methods.iter().enumerate() {
        for &d in &durations {
            let of_d: Vec<&Vec<Vec<f64>>> = per_task.iter().filter(|p| p.0 == d).map(|p| &p.1).collect();
            let (best, points) = select_tau(&cfg.tau_grid, |tau| {
                let k = cfg.tau_grid.iter().position(|&t| t == tau).expect("grid value");
                Ok(of_d.iter().map(|m| m[mi][k]).sum::<f64>() / of_d.len() as f64)
            })?;
            table.selected.insert((kind, method, d), best);
            table.rows.extend(points.into_iter().map(|SweepPoint { tau, metric }| SweepRow {
                suite: kind,
                method,
                duration: d,
                tau,
                metric,
            }));
        }
    }
    Ok(table)
}

/// Per-task, per-method outcome, written as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    pub suite: SuiteKind,
    pub duration: u64,
    pub method: Method,
    pub tau: Option<f64>,
    pub predicted: u64,
    pub gt: u64,
    pub metrics: BTreeMap<String, f64>,
    pub peak_token_count: Option<usize>,
    pub boundaries: Option<BoundaryCounts>,
    /// Running answers at the task's query timestamps.
    pub streaming: Option<Vec<u64>>,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSummaryRow {
    pub suite: SuiteKind,
    pub duration: u64,
    pub method: Method,
    pub tau: Option<f64>,
    pub n: usize,
    pub mean_mra: f64,
    pub sd_mra: f64,
    pub exact_rate: f64,
    pub pearson_r: Option<f64>,
    pub boundary: Option<Prf>,
    pub auroc: Option<f64>,
    pub streaming_consistent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallSummaryRow {
    pub suite: SuiteKind,
    pub duration: u64,
    pub method: Method,
    pub tau: Option<f64>,
    pub n: usize,
    pub accuracy: f64,
    pub no_evidence_rate: f64,
    pub mean_peak_tokens: Option<f64>,
    pub max_peak_tokens: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub completed: usize,
    pub failed: Vec<(String, String)>,
    pub sweep: SweepTable,
    pub count_rows: Vec<CountSummaryRow>,
    pub recall_rows: Vec<RecallSummaryRow>,
    pub records: Vec<ResultRecord>,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn count_row(&self, suite: SuiteKind, duration: u64, method: Method) -> Option<&CountSummaryRow> {
        self.count_rows.iter().find(|r| r.suite == suite && r.duration == duration && r.method == method)
    }

    pub fn recall_row(&self, duration: u64, method: Method) -> Option<&RecallSummaryRow> {
        self.recall_rows.iter().find(|r| r.duration == duration && r.method == method)
    }
}

/// Boundary scores of one stream, frame 0 excluded.
#[derive(Default)]
struct ScoreSplit {
    prediction: (Vec<f64>, Vec<f64>),
    adjacent: (Vec<f64>, Vec<f64>),
}

struct TaskOutput {
    records: Vec<ResultRecord>,
    scores: Option<ScoreSplit>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64() * 1e3))
}

fn record(task_id: &str, suite: SuiteKind, duration: u64, method: Method, tau: Option<f64>, predicted: u64, gt: u64, wall: f64) -> ResultRecord {
    ResultRecord {
        task_id: task_id.to_string(),
        suite,
        duration,
        method,
        tau,
        predicted,
        gt,
        metrics: BTreeMap::new(),
        peak_token_count: None,
        boundaries: None,
        streaming: None,
        wall_time_ms: wall,
    }
}

fn is_trace_task(id: &str) -> bool {
    id.ends_with("-000")
}

fn eval_count_task(cfg: &ExperimentConfig, kind: SuiteKind, model: &PredictorModel, sweep: &SweepTable, task: &CountTask, traces: &Path) -> Result<TaskOutput> {
    let scored = Scored::new(&task.spec, model)?;
    let trace = is_trace_task(&task.id);
    let mut records = Vec::new();
    for method in Method::COUNT {
        let mut r = match method {
            Method::SurpriseSeg | Method::AdjacentSeg => {
                let tau = sweep
                    .tau(kind, method, task.duration)
                    .ok_or_else(|| Error::InvalidConfig(format!("no swept threshold for {kind}/{method}/{}", task.duration)))?;
                let seg = SegmentConfig { threshold: tau, ..cfg.segment.clone() };
                let (run, wall) = timed(|| run_segments(&scored.frames, scored.scores(method), seg, &task.category, &task.query_timestamps))?;
                if trace {
                    run.bank.write_csv(traces.join(format!("segments_{kind}_{method}_{}.csv", task.duration)))?;
                }
                let mut r = record(&task.id, kind, task.duration, method, Some(tau), run.total, task.gt_total, wall);
                r.boundaries = Some(match_boundaries(&run.bank.boundaries(), scored.truth.boundaries(), cfg.boundary_tolerance));
                let consistent = run.streaming.last() == Some(&run.total);
                let monotone = run.streaming.windows(2).all(|w| w[0] <= w[1]);
                r.metrics.insert("streaming_consistent".into(), f64::from(u8::from(consistent && monotone)));
                r.streaming = Some(run.streaming);
                r
            }
            Method::GtSeg => {
                let c = OracleCounter::new(&task.category);
                let (total, wall) = timed(|| Ok(gt_segmentation_run(scored.frames.iter().map(|f| &f.annotation), &c)))?;
                record(&task.id, kind, task.duration, method, None, total, task.gt_total, wall)
            }
            Method::FixedWindow => {
                let c = OracleCounter::new(&task.category);
                let (total, wall) = timed(|| fixed_window_count(&scored.frames, cfg.fixed_window, &c))?;
                record(&task.id, kind, task.duration, method, None, total, task.gt_total, wall)
            }
            _ => unreachable!("recall method in count suite"),
        };
        r.metrics.insert("mra".into(), mra(r.predicted, r.gt)?);
        r.metrics.insert("exact".into(), f64::from(u8::from(r.predicted == r.gt)));
        records.push(r);
    }
    let boundaries = scored.truth.boundaries();
    let mut split = ScoreSplit::default();
    for t in 1..scored.frames.len() {
        let is_b = boundaries.binary_search(&(t as u64)).is_ok();
        let (p, a) = (scored.prediction[t], scored.adjacent[t]);
        if is_b {
            split.prediction.0.push(p);
            split.adjacent.0.push(a);
        } else {
            split.prediction.1.push(p);
            split.adjacent.1.push(a);
        }
    }
    if trace {
        let mut out = std::io::BufWriter::new(std::fs::File::create(traces.join(format!("surprise_{kind}_{}.csv", task.duration)))?);
        writeln!(out, "timestamp,prediction_error,adjacent_similarity,boundary")?;
        for t in 0..scored.frames.len() {
            let is_b = boundaries.binary_search(&(t as u64)).is_ok();
            writeln!(out, "{t},{:.6},{:.6},{}", scored.prediction[t], scored.adjacent[t], u8::from(is_b))?;
        }
        out.flush()?;
    }
    Ok(TaskOutput {
        records,
        scores: Some(split),
    })
}

fn eval_recall_task(cfg: &ExperimentConfig, model: &PredictorModel, sweep: &SweepTable, task: &RecallTask, traces: &Path) -> Result<TaskOutput> {
    let scored = Scored::new(&task.spec, model)?;
    let trace = is_trace_task(&task.id);
    let kind = SuiteKind::Recall;
    let mut records = Vec::new();
    for method in Method::RECALL {
        let (answer, tau, peak, wall) = match method {
            Method::SurpriseMemory | Method::AdjacentMemory => {
                let tau = sweep
                    .tau(kind, method, task.duration)
                    .ok_or_else(|| Error::InvalidConfig(format!("no swept threshold for {kind}/{method}/{}", task.duration)))?;
                let mem = MemoryConfig { threshold: tau, ..cfg.memory.clone() };
                let (run, wall) = timed(|| run_memory(&scored.frames, scored.scores(method), mem, task, trace))?;
                if trace {
                    write_trace_csv(traces.join(format!("memory_{method}_{}.csv", task.duration)), &run.trace)?;
                }
                (run.answer, Some(tau), Some(run.peak), wall)
            }
            Method::FixedWindow => {
                let (a, wall) = timed(|| fixed_window_recall(&scored.frames, cfg.fixed_window, &task.needle_label, &task.options))?;
                (a, None, None, wall)
            }
            _ => unreachable!("count method in recall suite"),
        };
        let mut r = record(&task.id, kind, task.duration, method, tau, answer.option as u64, task.correct_index as u64, wall);
        r.metrics.insert("correct".into(), f64::from(u8::from(answer.option == task.correct_index)));
        r.metrics.insert("no_evidence".into(), f64::from(u8::from(answer.no_evidence)));
        r.peak_token_count = peak;
        records.push(r);
    }
    Ok(TaskOutput { records, scores: None })
}

fn opt_auroc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    auroc(pos, neg).ok()
}

fn summarize_count(kind: SuiteKind, records: &[ResultRecord], scores: &BTreeMap<u64, ScoreSplit>) -> Result<Vec<CountSummaryRow>> {
    let mut rows = Vec::new();
    for (&d, split) in scores {
        for method in Method::COUNT {
            let rs: Vec<&ResultRecord> = records.iter().filter(|r| r.suite == kind && r.duration == d && r.method == method).collect();
            if rs.is_empty() {
                continue;
            }
            let mras: Vec<f64> = rs.iter().map(|r| r.metrics["mra"]).collect();
            let (mean_mra, sd_mra) = mean_sd(&mras);
            let exact = rs.iter().map(|r| r.metrics["exact"]).sum::<f64>() / rs.len() as f64;
            let pred: Vec<f64> = rs.iter().map(|r| r.predicted as f64).collect();
            let gt: Vec<f64> = rs.iter().map(|r| r.gt as f64).collect();
            let pearson_r = if rs.len() >= 2 { pearson(&pred, &gt)? } else { None };
            let boundary = if rs.iter().all(|r| r.boundaries.is_some()) {
                let mut c = BoundaryCounts::default();
                rs.iter().for_each(|r| c.add(r.boundaries.expect("checked")));
                Some(c.prf())
            } else {
                None
            };
            let auroc = match method {
                Method::SurpriseSeg => opt_auroc(&split.prediction.0, &split.prediction.1),
                Method::AdjacentSeg => opt_auroc(&split.adjacent.0, &split.adjacent.1),
                _ => None,
            };
            let streaming = rs
                .iter()
                .map(|r| r.metrics.get("streaming_consistent").copied())
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            rows.push(CountSummaryRow {
                suite: kind,
                duration: d,
                method,
                tau: rs[0].tau,
                n: rs.len(),
                mean_mra,
                sd_mra,
                exact_rate: exact,
                pearson_r,
                boundary,
                auroc,
                streaming_consistent: streaming,
            });
        }
    }
    Ok(rows)
}

fn summarize_recall(records: &[ResultRecord]) -> Vec<RecallSummaryRow> {
    let mut durations: Vec<u64> = records.iter().filter(|r| r.suite == SuiteKind::Recall).map(|r| r.duration).collect();
    durations.sort_unstable();
    durations.dedup();
    let mut rows = Vec::new();
    for d in durations {
        for method in Method::RECALL {
            let rs: Vec<&ResultRecord> = records.iter().filter(|r| r.suite == SuiteKind::Recall && r.duration == d && r.method == method).collect();
            if rs.is_empty() {
                continue;
            }
            let n = rs.len() as f64;
            let peaks: Vec<usize> = rs.iter().filter_map(|r| r.peak_token_count).collect();
            rows.push(RecallSummaryRow {
                suite: SuiteKind::Recall,
                duration: d,
                method,
                tau: rs[0].tau,
                n: rs.len(),
                accuracy: rs.iter().map(|r| r.metrics["correct"]).sum::<f64>() / n,
                no_evidence_rate: rs.iter().map(|r| r.metrics["no_evidence"]).sum::<f64>() / n,
                mean_peak_tokens: (!peaks.is_empty()).then(|| peaks.iter().sum::<usize>() as f64 / peaks.len() as f64),
                max_peak_tokens: peaks.iter().max().copied(),
            });
        }
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "NA".into(),
    }
}

fn fmt_tau(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |t| t.to_string())
}

pub fn write_count_summary(path: impl AsRef<Path>, rows: &[CountSummaryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "suite,duration,method,tau,n,mean_mra,sd_mra,exact_rate,pearson_r,boundary_precision,boundary_recall,boundary_f1,auroc,streaming_consistent"
    )?;
    for r in rows {
        let b = r.boundary;
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            r.suite,
            r.duration,
            r.method,
            fmt_tau(r.tau),
            r.n,
            r.mean_mra,
            r.sd_mra,
            r.exact_rate,
            fmt_opt(r.pearson_r),
            fmt_opt(b.map(|b| b.precision)),
            fmt_opt(b.map(|b| b.recall)),
            fmt_opt(b.map(|b| b.f1)),
            fmt_opt(r.auroc),
            fmt_opt(r.streaming_consistent)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_recall_summary(path: impl AsRef<Path>, rows: &[RecallSummaryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "suite,duration,method,tau,n,accuracy,no_evidence_rate,mean_peak_tokens,max_peak_tokens")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{},{}",
            r.suite,
            r.duration,
            r.method,
            fmt_tau(r.tau),
            r.n,
            r.accuracy,
            r.no_evidence_rate,
            fmt_opt(r.mean_peak_tokens),
            r.max_peak_tokens.map_or_else(|| "NA".into(), |p| p.to_string())
        )?;
    }
    out.flush()?;
    Ok(())
}

fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Checks inputs and split disjointness before any work is done.
fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.suites().is_empty() {
        return Err(Error::InvalidConfig("no suites configured".into()));
    }
    if let Some(dir) = &cfg.predictor.checkpoint_dir {
        for kind in cfg.suites() {
            let p = dir.join(checkpoint_name(kind));
            if !p.exists() {
                return Err(Error::MissingInput(p));
            }
        }
    }
    Ok(())
}

/// Builds every split of every configured suite, checks seed disjointness and
/// writes the suite manifests under `out/suites`. With `encoding`, the test
/// split streams are also written to `out/streams`.
pub fn generate_suites(cfg: &ExperimentConfig, out: &Path, encoding: Option<StreamEncoding>) -> Result<Vec<PathBuf>> {
    preflight(cfg)?;
    let suite_dir = out.join("suites");
    std::fs::create_dir_all(&suite_dir)?;
    let mut written = Vec::new();
    for kind in cfg.suites() {
        let mut seeds = Vec::new();
        for split in [Split::Train, Split::Tune, Split::Test] {
            let tasks = build_suite(cfg, kind, split)?;
            let mut manifest = tasks.manifest(cfg, kind, split);
            if let (Some(enc), Split::Test) = (encoding, split) {
                let stream_dir = out.join("streams");
                std::fs::create_dir_all(&stream_dir)?;
                let ext = if enc == StreamEncoding::Jsonl { "jsonl" } else { "bin" };
                for (entry, spec) in manifest.entries.iter_mut().zip(tasks.specs()) {
                    let path = stream_dir.join(format!("{}.{ext}", entry.task_id));
                    let header = StreamHeader::new(spec.dim, spec.tokens_per_frame, spec.frame_count(), spec.seed, spec.spec_hash());
                    let mut w = StreamWriter::create(&path, header, enc)?;
                    for f in StreamGenerator::new(spec.clone())? {
                        w.write_frame(&f)?;
                    }
                    w.finish()?;
                    entry.stream_path = Some(path.display().to_string());
                }
            }
            seeds.push(manifest.seeds());
            let path = suite_dir.join(format!("{kind}_{split}.json"));
            manifest.save(&path)?;
            written.push(path);
        }
        check_disjoint_seeds(seeds.iter().map(|s| s.as_slice()))?;
    }
    Ok(written)
}

/// Trains and saves the predictor of every configured suite.
pub fn train_predictors(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<(SuiteKind, Vec<f64>)>> {
    preflight(cfg)?;
    std::fs::create_dir_all(out)?;
    let mut histories = Vec::new();
    for kind in cfg.suites() {
        let (model, history) = prepare_predictor(cfg, kind)?;
        save_checkpoint(out.join(checkpoint_name(kind)), &model, cfg.seed, cfg.predictor.training.loss_weight)?;
        write_loss_history(out.join(format!("loss_history_{kind}.csv")), &history)?;
        histories.push((kind, history));
    }
    Ok(histories)
}

/// Runs only the threshold sweep and writes `sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepTable> {
    preflight(cfg)?;
    std::fs::create_dir_all(out)?;
    let mut table = SweepTable::default();
    for kind in cfg.suites() {
        let (model, _) = prepare_predictor(cfg, kind)?;
        let t = sweep_suite(cfg, kind, &model)?;
        table.rows.extend(t.rows);
        table.selected.extend(t.selected);
    }
    table.write_csv(out.join("sweep.csv"))?;
    Ok(table)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    name: &'a str,
    version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    suites: BTreeMap<String, String>,
    checkpoints: BTreeMap<String, String>,
    completed: usize,
    failed: &'a [(String, String)],
}

/// Full pipeline: suites, predictor training, τ sweep on the tuning split and
/// evaluation of every method on the test split. Individual task failures are
/// reported in the outcome rather than aborting the run.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    preflight(cfg)?;
    let traces = out.join("traces");
    std::fs::create_dir_all(&traces)?;
    let suite_files = generate_suites(cfg, out, None)?;
    let mut outcome = ExperimentOutcome {
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    let mut checkpoints = BTreeMap::new();
    for kind in cfg.suites() {
        let (model, history) = prepare_predictor(cfg, kind)?;
        let ckpt = out.join(checkpoint_name(kind));
        save_checkpoint(&ckpt, &model, cfg.seed, cfg.predictor.training.loss_weight)?;
        write_loss_history(out.join(format!("loss_history_{kind}.csv")), &history)?;
        checkpoints.insert(kind.to_string(), file_hash(&ckpt)?);

        let sweep = sweep_suite(cfg, kind, &model)?;
        let tasks = build_suite(cfg, kind, Split::Test)?;
        let results: Vec<(String, u64, Result<TaskOutput>)> = match &tasks {
            SuiteTasks::Recall(t) => t
                .par_iter()
                .map(|task| (task.id.clone(), task.duration, eval_recall_task(cfg, &model, &sweep, task, &traces)))
                .collect(),
            SuiteTasks::Count(t) => t
                .par_iter()
                .map(|task| (task.id.clone(), task.duration, eval_count_task(cfg, kind, &model, &sweep, task, &traces)))
                .collect(),
        };
        let mut records = Vec::new();
        let mut scores: BTreeMap<u64, ScoreSplit> = BTreeMap::new();
        for (id, duration, r) in results {
            match r {
                Ok(o) => {
                    outcome.completed += 1;
                    records.extend(o.records);
                    if let Some(s) = o.scores {
                        let e = scores.entry(duration).or_default();
                        e.prediction.0.extend(s.prediction.0);
                        e.prediction.1.extend(s.prediction.1);
                        e.adjacent.0.extend(s.adjacent.0);
                        e.adjacent.1.extend(s.adjacent.1);
                    }
                }
                Err(e) => outcome.failed.push((id, e.to_string())),
            }
        }
        match kind {
            SuiteKind::Recall => outcome.recall_rows.extend(summarize_recall(&records)),
            _ => outcome.count_rows.extend(summarize_count(kind, &records, &scores)?),
        }
        outcome.records.extend(records);
        outcome.sweep.rows.extend(sweep.rows);
        outcome.sweep.selected.extend(sweep.selected);
    }
    outcome.records.sort_by(|a, b| (a.suite, &a.task_id, a.method).cmp(&(b.suite, &b.task_id, b.method)));

    let mut jsonl = std::io::BufWriter::new(std::fs::File::create(out.join("results.jsonl"))?);
    for r in &outcome.records {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;
    write_count_summary(out.join("summary_count.csv"), &outcome.count_rows)?;
    write_recall_summary(out.join("summary_recall.csv"), &outcome.recall_rows)?;
    outcome.sweep.write_csv(out.join("sweep.csv"))?;

    let suites = suite_files
        .iter()
        .map(|p| Ok((p.file_name().expect("file").to_string_lossy().into_owned(), file_hash(p)?)))
        .collect::<Result<_>>()?;
    let manifest = RunManifest {
        name: &cfg.name,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config_hash(cfg),
        config: cfg,
        suites,
        checkpoints,
        completed: outcome.completed,
        failed: &outcome.failed,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(outcome)
}
