use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::stream::{seed_from, uniform_incl, NeedleSpec, ObjectSpec, SceneSpec, StreamSpec, StreamTruth};
use crate::error::{Error, Result};

pub const LOCATIONS: [&str; 12] = [
    "kitchen",
    "bathroom",
    "bedroom",
    "living room",
    "hallway",
    "garage",
    "office",
    "attic",
    "basement",
    "laundry",
    "dining room",
    "balcony",
];

const NEEDLE_LABELS: [&str; 6] = ["rubber duck", "traffic cone", "teapot", "toy robot", "pineapple", "red umbrella"];

/// Which disjoint seed family a suite is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Tune,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Tune => "tune",
            Split::Test => "test",
        })
    }
}

fn task_seed(suite: &str, base: u64, split: Split, duration: u64, index: usize) -> u64 {
    seed_from(&format!("{suite}/{base}/{split}/{duration}/{index}"))
}

fn sample_scene_lengths(rng: &mut ChaCha8Rng, duration: u64, range: (u64, u64)) -> Vec<u64> {
    let mut out = Vec::new();
    let mut left = duration;
    while left > 0 {
        let l = uniform_incl(rng, range.0, range.1).min(left);
        out.push(l);
        left -= l;
    }
    out
}

fn check_common(durations: &[u64], tasks: usize, dim: usize, tokens: usize, scene_len: (u64, u64)) -> Result<()> {
    if durations.is_empty() || durations.contains(&0) {
        return Err(Error::InvalidConfig("durations must be non-empty and positive".into()));
    }
    if tasks == 0 || dim < 2 || tokens == 0 {
        return Err(Error::InvalidConfig("tasks, dim and tokens_per_frame must be positive (dim >= 2)".into()));
    }
    if scene_len.0 == 0 || scene_len.0 > scene_len.1 {
        return Err(Error::InvalidConfig(format!("invalid scene length range {scene_len:?}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallSuiteConfig {
    pub seed: u64,
    pub durations: Vec<u64>,
    pub tasks_per_duration: usize,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub boundary_distance: f64,
    pub noise: f64,
    pub needle_offset: f64,
    pub drift_rate: f64,
    pub token_spread: f64,
    pub scene_len: (u64, u64),
}

impl Default for RecallSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            durations: vec![600, 1800, 3600, 7200, 14400],
            tasks_per_duration: 60,
            dim: 32,
            tokens_per_frame: 16,
            boundary_distance: 0.6,
            noise: 0.06,
            needle_offset: 3.0,
            drift_rate: 0.0,
            token_spread: 0.3,
            scene_len: (60, 180),
        }
    }
}

/// Recall the ordered locations where a needle label appeared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallTask {
    pub id: String,
    pub duration: u64,
    pub split: Split,
    pub spec: StreamSpec,
    pub needle_label: String,
    pub options: Vec<Vec<String>>,
    pub correct_index: usize,
}

impl RecallTask {
    pub fn truth(&self) -> Result<StreamTruth> {
        self.spec.truth()
    }
}

fn anchor_distance(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    (base * rng.gen_range(0.5..=1.5)).min(2.0)
}

/// Needle recall tasks. Each stream carries 4 needles of one label in 4
/// distinct scenes with distinct locations; distractor options are other
/// orderings of the same locations.
pub fn build_recall_suite(cfg: &RecallSuiteConfig, split: Split) -> Result<Vec<RecallTask>> {
    check_common(&cfg.durations, cfg.tasks_per_duration, cfg.dim, cfg.tokens_per_frame, cfg.scene_len)?;
    let mut tasks = Vec::with_capacity(cfg.durations.len() * cfg.tasks_per_duration);
    for &duration in &cfg.durations {
        for i in 0..cfg.tasks_per_duration {
            let seed = task_seed("recall", cfg.seed, split, duration, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lens = sample_scene_lengths(&mut rng, duration, cfg.scene_len);
            let eligible: Vec<usize> = (0..lens.len()).filter(|&s| lens[s] >= 3).collect();
            if eligible.len() < 4 {
                return Err(Error::InvalidConfig(format!(
                    "duration {duration} yields {} usable scenes; recall tasks need 4",
                    eligible.len()
                )));
            }
            let mut needle_scenes: Vec<usize> = eligible.choose_multiple(&mut rng, 4).copied().collect();
            needle_scenes.sort_unstable();
            let mut pool: Vec<&str> = LOCATIONS.to_vec();
            pool.shuffle(&mut rng);
            let mut scenes: Vec<SceneSpec> = lens
                .iter()
                .enumerate()
                .map(|(s, &len)| SceneSpec {
                    duration_frames: len,
                    anchor_distance: if s == 0 { 0.0 } else { anchor_distance(&mut rng, cfg.boundary_distance) },
                    location: LOCATIONS[rng.gen_range(0..LOCATIONS.len())].to_string(),
                    objects: vec![],
                })
                .collect();
            let label = NEEDLE_LABELS[rng.gen_range(0..NEEDLE_LABELS.len())].to_string();
            let mut needles = Vec::with_capacity(4);
            let mut correct = Vec::with_capacity(4);
            for (k, &s) in needle_scenes.iter().enumerate() {
                scenes[s].location = pool[k].to_string();
                let start: u64 = lens[..s].iter().sum();
                needles.push(NeedleSpec {
                    frame: start + uniform_incl(&mut rng, 1, lens[s] - 2),
                    label: label.clone(),
                    order_index: k as u8,
                });
                correct.push(pool[k].to_string());
            }
            let mut options = vec![correct.clone()];
            while options.len() < 4 {
                let mut p = correct.clone();
                p.shuffle(&mut rng);
                if !options.contains(&p) {
                    options.push(p);
                }
            }
            let correct_index = rng.gen_range(0..4);
            options.swap(0, correct_index);
            tasks.push(RecallTask {
                id: format!("recall-{split}-{duration}-{i:03}"),
                duration,
                split,
                spec: StreamSpec {
                    seed,
                    dim: cfg.dim,
                    tokens_per_frame: cfg.tokens_per_frame,
                    scenes,
                    needle_offset: cfg.needle_offset,
                    noise: cfg.noise,
                    drift_rate: cfg.drift_rate,
                    token_spread: cfg.token_spread,
                    needles,
                },
                needle_label: label,
                options,
                correct_index,
            });
        }
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountSuiteConfig {
    pub seed: u64,
    pub durations: Vec<u64>,
    pub tasks_per_duration: usize,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub boundary_distance: f64,
    pub noise: f64,
    pub drift_rate: f64,
    pub token_spread: f64,
    pub scene_len: (u64, u64),
    pub category: String,
    pub distractor_categories: Vec<String>,
    /// Distractor objects per scene, inclusive range.
    pub distractors_per_scene: (u64, u64),
    /// Target totals are drawn from `[duration / frames_per_object.0, duration / frames_per_object.1]`.
    pub frames_per_object: (u64, u64),
    /// Number of equal-width count buckets the targets are spread across.
    pub count_buckets: usize,
    /// Shape of the Gamma weights that share objects among scenes.
    pub allocation_shape: f64,
    pub queries: usize,
}

impl Default for CountSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            durations: vec![600, 1800, 3600, 7200],
            tasks_per_duration: 50,
            dim: 32,
            tokens_per_frame: 16,
            boundary_distance: 1.0,
            noise: 0.2,
            drift_rate: 0.0,
            token_spread: 0.3,
            scene_len: (60, 180),
            category: "chair".into(),
            distractor_categories: vec!["table".into(), "lamp".into()],
            distractors_per_scene: (0, 3),
            frames_per_object: (60, 45),
            count_buckets: 5,
            allocation_shape: 0.5,
            queries: 10,
        }
    }
}

impl CountSuiteConfig {
    /// The standard suite with gradual within-scene drift.
    pub fn drift() -> Self {
        Self {
            drift_rate: 0.6,
            ..Self::default()
        }
    }

    /// Inclusive target range for a duration.
    pub fn count_range(&self, duration: u64) -> (u64, u64) {
        let lo = duration.div_ceil(self.frames_per_object.0).max(1);
        let hi = (duration / self.frames_per_object.1).max(lo);
        (lo, hi)
    }

    /// Number of buckets used for a duration: never more than the distinct counts in range.
    pub fn buckets_for(&self, duration: u64) -> usize {
        let (lo, hi) = self.count_range(duration);
        self.count_buckets.min((hi - lo + 1) as usize)
    }

    /// Inclusive count range of bucket `b` for a duration.
    pub fn bucket_range(&self, duration: u64, b: usize) -> (u64, u64) {
        let (lo, hi) = self.count_range(duration);
        let n = self.buckets_for(duration) as u64;
        let span = hi - lo + 1;
        let b = b as u64;
        (lo + b * span / n, lo + (b + 1) * span / n - 1)
    }

    /// Bucket index of a count within a duration's range.
    pub fn bucket_of(&self, duration: u64, count: u64) -> usize {
        let (lo, hi) = self.count_range(duration);
        let n = self.buckets_for(duration) as u64;
        let span = hi - lo + 1;
        ((count.clamp(lo, hi) - lo + 1) * n).div_ceil(span) as usize - 1
    }
}

/// Cumulative counting over a multi-scene stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTask {
    pub id: String,
    pub duration: u64,
    pub split: Split,
    pub spec: StreamSpec,
    pub category: String,
    pub gt_total: u64,
    pub query_timestamps: Vec<u64>,
    pub query_gt: Vec<u64>,
}

/// Evenly spaced query timestamps ending at the last frame.
pub fn query_timestamps(duration: u64, n: usize) -> Vec<u64> {
    let n = n as u64;
    (1..=n).map(|j| (j * duration / n).max(1) - 1).collect()
}

fn scene_object(rng: &mut ChaCha8Rng, id: u32, category: &str, len: u64) -> ObjectSpec {
    let start = rng.gen_range(0..len);
    let span = uniform_incl(rng, 1, (len / 2).max(1));
    ObjectSpec {
        object_id: id,
        category: category.to_string(),
        windows: vec![(start, (start + span).min(len))],
    }
}

/// Counting tasks whose targets are spread evenly over the count buckets.
/// Object ids are unique per stream, so scenes never share an object.
pub fn build_count_suite(cfg: &CountSuiteConfig, split: Split) -> Result<Vec<CountTask>> {
    check_common(&cfg.durations, cfg.tasks_per_duration, cfg.dim, cfg.tokens_per_frame, cfg.scene_len)?;
    if cfg.count_buckets == 0 || cfg.frames_per_object.1 == 0 || cfg.frames_per_object.0 < cfg.frames_per_object.1 {
        return Err(Error::InvalidConfig("invalid count range settings".into()));
    }
    if cfg.distractors_per_scene.0 > cfg.distractors_per_scene.1 || cfg.queries == 0 {
        return Err(Error::InvalidConfig("invalid distractor range or query count".into()));
    }
    let gamma = Gamma::new(cfg.allocation_shape, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut tasks = Vec::with_capacity(cfg.durations.len() * cfg.tasks_per_duration);
    for &duration in &cfg.durations {
        let buckets = cfg.buckets_for(duration);
        for i in 0..cfg.tasks_per_duration {
            let seed = task_seed("count", cfg.seed, split, duration, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (b_lo, b_hi) = cfg.bucket_range(duration, i % buckets);
            let target = uniform_incl(&mut rng, b_lo, b_hi);

            let lens = sample_scene_lengths(&mut rng, duration, cfg.scene_len);
            let weights: Vec<f64> = lens.iter().map(|_| gamma.sample(&mut rng).max(1e-12)).collect();
            let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut per_scene = vec![0u64; lens.len()];
            for _ in 0..target {
                per_scene[pick.sample(&mut rng)] += 1;
            }
            let mut next_id = 0u32;
            let mut scenes = Vec::with_capacity(lens.len());
            for (s, &len) in lens.iter().enumerate() {
                let mut objects = Vec::new();
                for _ in 0..per_scene[s] {
                    objects.push(scene_object(&mut rng, next_id, &cfg.category, len));
                    next_id += 1;
                }
                if !cfg.distractor_categories.is_empty() {
                    for _ in 0..uniform_incl(&mut rng, cfg.distractors_per_scene.0, cfg.distractors_per_scene.1) {
                        let c = &cfg.distractor_categories[rng.gen_range(0..cfg.distractor_categories.len())];
                        objects.push(scene_object(&mut rng, next_id, c, len));
                        next_id += 1;
                    }
                }
                scenes.push(SceneSpec {
                    duration_frames: len,
                    anchor_distance: if s == 0 { 0.0 } else { anchor_distance(&mut rng, cfg.boundary_distance) },
                    location: LOCATIONS[rng.gen_range(0..LOCATIONS.len())].to_string(),
                    objects,
                });
            }
            let spec = StreamSpec {
                seed,
                dim: cfg.dim,
                tokens_per_frame: cfg.tokens_per_frame,
                scenes,
                needle_offset: 0.0,
                noise: cfg.noise,
                drift_rate: cfg.drift_rate,
                token_spread: cfg.token_spread,
                needles: vec![],
            };
            let truth = spec.truth()?;
            let query_timestamps = query_timestamps(duration, cfg.queries);
            tasks.push(CountTask {
                id: format!("count-{split}-{duration}-{i:03}"),
                duration,
                split,
                gt_total: truth.count(&cfg.category),
                query_gt: truth.count_at(&cfg.category, &query_timestamps),
                query_timestamps,
                category: cfg.category.clone(),
                spec,
            });
        }
    }
    Ok(tasks)
}

/// Fails if any stream seed appears in more than one of the given seed sets.
pub fn check_disjoint_seeds<'a>(sets: impl IntoIterator<Item = &'a [u64]>) -> Result<()> {
    let mut seen = HashSet::new();
    for set in sets {
        let local: HashSet<u64> = set.iter().copied().collect();
        if let Some(s) = local.iter().find(|s| seen.contains(*s)) {
            return Err(Error::InvalidConfig(format!("stream seed {s} is shared between splits")));
        }
        seen.extend(local);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub duration: u64,
    pub seed: u64,
    pub spec_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_path: Option<String>,
    /// Correct option index for recall, total count for counting.
    pub answer: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub suite: String,
    pub split: Split,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl SuiteManifest {
    pub fn for_recall(cfg: &RecallSuiteConfig, split: Split, tasks: &[RecallTask]) -> Self {
        Self {
            suite: "recall".into(),
            split,
            config_hash: super::config_hash(cfg),
            entries: tasks
                .iter()
                .map(|t| ManifestEntry {
                    task_id: t.id.clone(),
                    duration: t.duration,
                    seed: t.spec.seed,
                    spec_hash: t.spec.spec_hash(),
                    stream_path: None,
                    answer: t.correct_index as u64,
                })
                .collect(),
        }
    }

    pub fn for_count(cfg: &CountSuiteConfig, split: Split, tasks: &[CountTask]) -> Self {
        Self {
            suite: "count".into(),
            split,
            config_hash: super::config_hash(cfg),
            entries: tasks
                .iter()
                .map(|t| ManifestEntry {
                    task_id: t.id.clone(),
                    duration: t.duration,
                    seed: t.spec.seed,
                    spec_hash: t.spec.spec_hash(),
                    stream_path: None,
                    answer: t.gt_total,
                })
                .collect(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.seed).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
