use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{FeatureVector, FrameAnnotation, LatentFrame, NeedleMark, ObjectSighting, TokenGrid};

/// An object and the scene-relative frame ranges `[start, end)` where it is visible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: u32,
    pub category: String,
    pub windows: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration_frames: u64,
    /// Euclidean distance between this scene's anchor and the previous scene's
    /// anchor as seen on its last frame. Ignored for the first scene.
    pub anchor_distance: f64,
    pub location: String,
    pub objects: Vec<ObjectSpec>,
}

/// An out-of-place object inserted at an absolute frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub frame: u64,
    pub label: String,
    pub order_index: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub seed: u64,
    pub dim: usize,
    pub tokens_per_frame: usize,
    pub scenes: Vec<SceneSpec>,
    pub needle_offset: f64,
    /// Expected norm of the per-token noise.
    pub noise: f64,
    /// Rotation angle per frame, in radians, applied within each scene.
    pub drift_rate: f64,
    /// RMS norm of the per-token offsets around the scene anchor.
    pub token_spread: f64,
    #[serde(default)]
    pub needles: Vec<NeedleSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub object_id: u32,
    pub category: String,
    pub first_frame: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleTruth {
    pub frame: u64,
    pub label: String,
    pub location: String,
    pub order_index: u8,
}

/// Everything a task needs to be scored, derived from the stream spec without
/// generating any tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub frame_count: u64,
    /// First frame of every scene, including frame 0.
    pub scene_starts: Vec<u64>,
    pub objects: Vec<ObjectTruth>,
    pub needles: Vec<NeedleTruth>,
}

impl StreamTruth {
    /// Scene starts after frame 0: the true event boundaries.
    pub fn boundaries(&self) -> &[u64] {
        &self.scene_starts[1..]
    }

    pub fn count(&self, category: &str) -> u64 {
        self.objects.iter().filter(|o| o.category == category).count() as u64
    }

    /// Distinct `category` objects first seen at or before each timestamp.
    pub fn count_at(&self, category: &str, timestamps: &[u64]) -> Vec<u64> {
        timestamps
            .iter()
            .map(|&t| {
                self.objects
                    .iter()
                    .filter(|o| o.category == category && o.first_frame <= t)
                    .count() as u64
            })
            .collect()
    }
}

impl StreamSpec {
    pub fn frame_count(&self) -> u64 {
        self.scenes.iter().map(|s| s.duration_frames).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.scenes.is_empty() {
            return bad("stream needs at least one scene".into());
        }
        if self.dim < 2 || self.tokens_per_frame == 0 {
            return bad(format!("dim must be >= 2 and tokens_per_frame >= 1, got {} and {}", self.dim, self.tokens_per_frame));
        }
        for (name, v) in [
            ("needle_offset", self.needle_offset),
            ("noise", self.noise),
            ("token_spread", self.token_spread),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.drift_rate.is_finite() {
            return bad("drift_rate must be finite".into());
        }
        for (i, s) in self.scenes.iter().enumerate() {
            if s.duration_frames == 0 {
                return bad(format!("scene {i} has zero duration"));
            }
            if !(0.0..=2.0).contains(&s.anchor_distance) {
                return bad(format!("scene {i} anchor_distance {} outside [0, 2]", s.anchor_distance));
            }
            for o in &s.objects {
                if o.windows.iter().any(|&(a, b)| a >= b || b > s.duration_frames) {
                    return bad(format!("object {} in scene {i} has a window outside the scene", o.object_id));
                }
            }
        }
        let total = self.frame_count();
        for n in &self.needles {
            if n.frame >= total {
                return bad(format!("needle at frame {} beyond stream of {total} frames", n.frame));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of this stream spec's JSON encoding.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn truth(&self) -> Result<StreamTruth> {
        self.validate()?;
        let mut scene_starts = Vec::with_capacity(self.scenes.len());
        let mut first: BTreeMap<u32, (u64, String)> = BTreeMap::new();
        let mut start = 0;
        for s in &self.scenes {
            scene_starts.push(start);
            for o in &s.objects {
                if let Some(w) = o.windows.iter().map(|w| w.0).min() {
                    let f = start + w;
                    let e = first.entry(o.object_id).or_insert((f, o.category.clone()));
                    e.0 = e.0.min(f);
                }
            }
            start += s.duration_frames;
        }
        let mut objects: Vec<ObjectTruth> = first
            .into_iter()
            .map(|(object_id, (first_frame, category))| ObjectTruth {
                object_id,
                category,
                first_frame,
            })
            .collect();
        objects.sort_by_key(|o| (o.first_frame, o.object_id));
        let mut needles: Vec<NeedleTruth> = self
            .needles
            .iter()
            .map(|n| NeedleTruth {
                frame: n.frame,
                label: n.label.clone(),
                location: self.scenes[scene_of(&scene_starts, n.frame)].location.clone(),
                order_index: n.order_index,
            })
            .collect();
        needles.sort_by_key(|n| n.frame);
        Ok(StreamTruth {
            frame_count: start,
            scene_starts,
            objects,
            needles,
        })
    }
}

fn scene_of(starts: &[u64], frame: u64) -> usize {
    starts.partition_point(|&s| s <= frame) - 1
}

/// Derives a 64-bit seed from a string.
pub(crate) fn seed_from(text: &str) -> u64 {
    let h = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The world-constant unit direction of a needle label for a given dimension.
pub fn needle_direction(label: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&format!("needle/{label}/{dim}")));
    unit_gaussian(&mut rng, dim)
}

/// Retrieval query for a needle label.
pub fn needle_embedding(label: &str, dim: usize) -> FeatureVector {
    FeatureVector::new(needle_direction(label, dim).into_iter().map(|x| x as f32).collect()).expect("finite unit vector")
}

/// Rotates consecutive coordinate pairs by `angle`; an odd trailing coordinate is left alone.
fn rotate_into(v: &[f64], angle: f64, out: &mut [f64]) {
    let (s, c) = angle.sin_cos();
    for (src, dst) in v.chunks(2).zip(out.chunks_mut(2)) {
        if let [x, y] = *src {
            dst[0] = c * x - s * y;
            dst[1] = s * x + c * y;
        } else {
            dst[0] = src[0];
        }
    }
}

#[derive(Clone, Debug)]
struct ScenePlan {
    start: u64,
    anchor: Vec<f64>,
    /// `tokens_per_frame * dim` offsets, centered over tokens.
    layout: Vec<f64>,
    /// Objects as (id, category, absolute windows).
    objects: Vec<(u32, String, Vec<(u64, u64)>)>,
}

/// Lazily yields the frames of a [`StreamSpec`].
#[derive(Clone, Debug)]
pub struct StreamGenerator {
    spec: StreamSpec,
    plans: Vec<ScenePlan>,
    needles: HashMap<u64, (NeedleMark, Vec<f64>)>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    t: u64,
    total: u64,
    scene: usize,
    base: Vec<f64>,
    rotated: Vec<f64>,
}

impl StreamGenerator {
    pub fn new(spec: StreamSpec) -> Result<Self> {
        let truth = spec.truth()?;
        let d = spec.dim;
        let tf = spec.tokens_per_frame;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut plans: Vec<ScenePlan> = Vec::with_capacity(spec.scenes.len());
        let mut prev_end_anchor: Option<Vec<f64>> = None;
        for (si, s) in spec.scenes.iter().enumerate() {
            let anchor = match &prev_end_anchor {
                None => unit_gaussian(&mut rng, d),
                Some(p) => {
                    let mut q = unit_gaussian(&mut rng, d);
                    let proj: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
                    q.iter_mut().zip(p).for_each(|(a, b)| *a -= proj * b);
                    let qn = norm(&q);
                    let cos = 1.0 - s.anchor_distance * s.anchor_distance / 2.0;
                    let sin = (1.0 - cos * cos).max(0.0).sqrt();
                    p.iter().zip(&q).map(|(a, b)| cos * a + sin * b / qn).collect()
                }
            };
            let mut layout: Vec<f64> = (0..tf * d).map(|_| rng.sample(StandardNormal)).collect();
            for j in 0..d {
                let mean = (0..tf).map(|i| layout[i * d + j]).sum::<f64>() / tf as f64;
                (0..tf).for_each(|i| layout[i * d + j] -= mean);
            }
            let rms = (layout.iter().map(|x| x * x).sum::<f64>() / tf as f64).sqrt();
            if rms > 0.0 {
                let k = spec.token_spread / rms;
                layout.iter_mut().for_each(|x| *x *= k);
            }
            let start = truth.scene_starts[si];
            let mut end = vec![0.0; d];
            rotate_into(&anchor, spec.drift_rate * (s.duration_frames - 1) as f64, &mut end);
            prev_end_anchor = Some(end);
            let objects = s
                .objects
                .iter()
                .map(|o| {
                    let w = o.windows.iter().map(|&(a, b)| (start + a, start + b)).collect();
                    (o.object_id, o.category.clone(), w)
                })
                .collect();
            plans.push(ScenePlan {
                start,
                anchor,
                layout,
                objects,
            });
        }
        let needles = truth
            .needles
            .iter()
            .map(|n| {
                let mark = NeedleMark {
                    label: n.label.clone(),
                    location: n.location.clone(),
                    order_index: n.order_index,
                };
                (n.frame, (mark, needle_direction(&n.label, d)))
            })
            .collect();
        let noise = Normal::new(0.0, spec.noise / (d as f64).sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        rng.set_stream(1);
        Ok(Self {
            total: truth.frame_count,
            spec,
            plans,
            needles,
            rng,
            noise,
            t: 0,
            scene: 0,
            base: vec![0.0; d],
            rotated: vec![0.0; d],
        })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    fn frame(&mut self) -> LatentFrame {
        let d = self.spec.dim;
        let t = self.t;
        while self.scene + 1 < self.plans.len() && self.plans[self.scene + 1].start <= t {
            self.scene += 1;
        }
        let plan = &self.plans[self.scene];
        let angle = self.spec.drift_rate * (t - plan.start) as f64;
        let needle = self.needles.get(&t);
        let mut data = Vec::with_capacity(self.spec.tokens_per_frame * d);
        for offsets in plan.layout.chunks_exact(d) {
            for ((b, a), o) in self.base.iter_mut().zip(&plan.anchor).zip(offsets) {
                *b = a + o;
            }
            rotate_into(&self.base, angle, &mut self.rotated);
            if let Some((_, dir)) = needle {
                let m = self.spec.needle_offset;
                self.rotated.iter_mut().zip(dir).for_each(|(x, u)| *x += m * u);
            }
            for x in &self.rotated {
                data.push((x + self.noise.sample(&mut self.rng)) as f32);
            }
        }
        let mut objects: Vec<ObjectSighting> = plan
            .objects
            .iter()
            .filter(|(_, _, w)| w.iter().any(|&(a, b)| a <= t && t < b))
            .map(|(id, c, _)| ObjectSighting {
                id: *id,
                category: c.clone(),
            })
            .collect();
        objects.sort_by_key(|o| o.id);
        LatentFrame {
            timestamp: t,
            grid: TokenGrid::from_raw(d, data),
            annotation: FrameAnnotation {
                scene_id: self.scene as u32,
                objects,
                needle: needle.map(|n| n.0.clone()),
            },
        }
    }
}

impl Iterator for StreamGenerator {
    type Item = LatentFrame;

    fn next(&mut self) -> Option<LatentFrame> {
        if self.t >= self.total {
            return None;
        }
        let f = self.frame();
        self.t += 1;
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.total - self.t) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for StreamGenerator {}

/// Generates all frames of `spec` together with its ground truth.
pub fn generate_stream(spec: &StreamSpec) -> Result<(Vec<LatentFrame>, StreamTruth)> {
    let truth = spec.truth()?;
    let frames = StreamGenerator::new(spec.clone())?.collect();
    Ok((frames, truth))
}

/// Distinct `category` object ids over all frames, by full scan.
pub fn brute_force_count<'a>(frames: impl IntoIterator<Item = &'a LatentFrame>, category: &str) -> u64 {
    let mut ids = HashSet::new();
    for f in frames {
        ids.extend(f.annotation.objects.iter().filter(|o| o.category == category).map(|o| o.id));
    }
    ids.len() as u64
}

/// Uniform integer in `[lo, hi]`.
pub(crate) fn uniform_incl(rng: &mut impl Rng, lo: u64, hi: u64) -> u64 {
    rng.gen_range(lo..=hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::{cosine_distance, pooled_feature};

    pub(crate) fn scene(len: u64, delta: f64, objects: Vec<ObjectSpec>) -> SceneSpec {
        SceneSpec {
            duration_frames: len,
            anchor_distance: delta,
            location: format!("room{len}"),
            objects,
        }
    }

    fn spec(scenes: Vec<SceneSpec>, noise: f64, drift: f64) -> StreamSpec {
        StreamSpec {
            seed: 7,
            dim: 16,
            tokens_per_frame: 8,
            scenes,
            needle_offset: 0.0,
            noise,
            drift_rate: drift,
            token_spread: 0.3,
            needles: vec![],
        }
    }

    #[test]
    fn noiseless_single_scene_repeats_one_frame() {
        let (frames, truth) = generate_stream(&spec(vec![scene(20, 0.0, vec![])], 0.0, 0.0)).unwrap();
        assert_eq!(frames.len(), 20);
        assert!(frames.iter().all(|f| f.grid == frames[0].grid));
        assert_eq!(truth.scene_starts, vec![0]);
    }

    #[test]
    fn same_seed_same_frames() {
        let s = spec(vec![scene(10, 0.0, vec![]), scene(10, 1.0, vec![])], 0.2, 0.1);
        let a = generate_stream(&s).unwrap().0;
        let b = generate_stream(&s).unwrap().0;
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(a, generate_stream(&other).unwrap().0);
        assert_eq!(s.spec_hash(), s.clone().spec_hash());
        assert_ne!(s.spec_hash(), other.spec_hash());
    }

    #[test]
    fn boundary_distance_dominates_within_scene() {
        let s = spec(vec![scene(40, 0.0, vec![]), scene(40, 1.0, vec![])], 0.05, 0.0);
        let (frames, truth) = generate_stream(&s).unwrap();
        let feats: Vec<_> = frames.iter().map(|f| pooled_feature(&f.grid)).collect();
        let dist = |t: usize| cosine_distance(feats[t - 1].as_slice(), feats[t].as_slice()).unwrap();
        let b = truth.boundaries()[0] as usize;
        let within = (1..frames.len()).filter(|&t| t != b).map(dist).fold(0.0, f64::max);
        assert!(dist(b) > within, "{} vs {}", dist(b), within);
        // Unit anchors at distance 1 and zero-mean layouts: pooled distance is about 0.5.
        assert!((dist(b) - 0.5).abs() < 0.05);
    }

    #[test]
    fn drift_gives_constant_adjacent_distance() {
        let r = 0.3;
        let (frames, _) = generate_stream(&spec(vec![scene(10, 0.0, vec![])], 0.0, r)).unwrap();
        for w in frames.windows(2) {
            let d = cosine_distance(pooled_feature(&w[0].grid).as_slice(), pooled_feature(&w[1].grid).as_slice()).unwrap();
            assert!((d - (1.0 - r.cos())).abs() < 1e-5);
        }
    }

    #[test]
    fn annotations_follow_windows() {
        let obj = |id, windows| ObjectSpec {
            object_id: id,
            category: "chair".into(),
            windows,
        };
        let s = spec(
            vec![scene(5, 0.0, vec![obj(1, vec![(1, 3)])]), scene(5, 1.0, vec![obj(2, vec![(0, 1), (4, 5)])])],
            0.1,
            0.0,
        );
        let (frames, truth) = generate_stream(&s).unwrap();
        let ids: Vec<Vec<u32>> = frames.iter().map(|f| f.annotation.objects.iter().map(|o| o.id).collect()).collect();
        assert_eq!(ids[0], Vec::<u32>::new());
        assert_eq!(ids[1], vec![1]);
        assert_eq!(ids[5], vec![2]);
        assert_eq!(ids[9], vec![2]);
        assert_eq!(frames[5].annotation.scene_id, 1);
        assert_eq!(truth.count("chair"), 2);
        assert_eq!(brute_force_count(&frames, "chair"), 2);
        assert_eq!(truth.count_at("chair", &[0, 1, 4, 5]), vec![0, 1, 1, 2]);
    }

    #[test]
    fn needles_offset_tokens_and_carry_location() {
        let mut s = spec(vec![scene(6, 0.0, vec![]), scene(6, 0.8, vec![])], 0.0, 0.0);
        s.needle_offset = 3.0;
        s.needles = vec![NeedleSpec {
            frame: 8,
            label: "duck".into(),
            order_index: 0,
        }];
        let (frames, truth) = generate_stream(&s).unwrap();
        assert_eq!(truth.needles[0].location, "room6");
        assert_eq!(frames[8].annotation.needle.as_ref().unwrap().label, "duck");
        let u = needle_direction("duck", 16);
        let diff: Vec<f64> = frames[8].grid.token(0).iter().zip(frames[7].grid.token(0)).map(|(a, b)| (a - b) as f64).collect();
        for (d, u) in diff.iter().zip(&u) {
            assert!((d - 3.0 * u).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_stream(&spec(vec![], 0.1, 0.0)).is_err());
        assert!(generate_stream(&spec(vec![scene(0, 0.0, vec![])], 0.1, 0.0)).is_err());
        assert!(generate_stream(&spec(vec![scene(3, 0.0, vec![])], -0.1, 0.0)).is_err());
        assert!(generate_stream(&spec(vec![scene(3, 0.0, vec![]), scene(3, 2.5, vec![])], 0.1, 0.0)).is_err());
        let mut s = spec(vec![scene(3, 0.0, vec![])], 0.1, 0.0);
        s.needles.push(NeedleSpec {
            frame: 3,
            label: "x".into(),
            order_index: 0,
        });
        assert!(generate_stream(&s).is_err());
    }
}
