//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::cmp::Ordering;
use std::time::Instant;

use predsense_core::harness::{mra, run_experiment, ExperimentConfig, ExperimentOutcome, Method, SuiteKind};
use predsense_core::memory::{ConsolidationStrategy, LongTermMemory, MemoryConfig, MemoryEngine, MemoryItem};
use predsense_core::predictor::{finite_difference_check, train, PredictorModel, SurpriseEstimator, TrainingConfig};
use predsense_core::segmentation::{gt_segmentation_run, process_stream, EventLoop, OracleCounter};
use predsense_core::simulator::{
    build_count_suite, generate_stream, CountSuiteConfig, SceneSpec, Split, StreamGenerator, StreamSpec,
};
use predsense_core::{FeatureVector, FrameAnnotation, TokenGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, name, pass, detail }
}

fn long_stream(frames: u64, seed: u64) -> StreamSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::new();
    let mut left = frames;
    while left > 0 {
        let len = rng.gen_range(60..=180).min(left);
        scenes.push(SceneSpec {
            duration_frames: len,
            anchor_distance: if scenes.is_empty() { 0.0 } else { 1.0 },
            location: "room".into(),
            objects: vec![],
        });
        left -= len;
    }
    StreamSpec {
        seed,
        dim: 64,
        tokens_per_frame: 64,
        scenes,
        needle_offset: 0.0,
        noise: 0.2,
        drift_rate: 0.0,
        token_spread: 0.3,
        needles: vec![],
    }
}

fn criterion_1() -> Verdict {
    let (train_frames, _) = generate_stream(&long_stream(400, 1)).unwrap();
    let cfg = TrainingConfig {
        epochs: 3,
        ..Default::default()
    };
    let (model, _) = train(PredictorModel::linear(64, 0), &[train_frames], &cfg).unwrap();
    let estimator = SurpriseEstimator::prediction_error(model);

    let calibration: Vec<_> = StreamGenerator::new(long_stream(300, 2)).unwrap().collect();
    let mut scores = predsense_core::predictor::score_stream(&estimator, &calibration).unwrap();
    scores.sort_by(f64::total_cmp);
    let tau = scores[scores.len() / 2];

    let mem = MemoryConfig {
        sensory_budget: 16,
        token_budget: 32_768,
        threshold: tau,
        ..Default::default()
    };
    let mut peaks = Vec::new();
    let mut secs_10k = 0.0;
    for n in [1_000u64, 5_000, 10_000] {
        let mut engine = MemoryEngine::new(mem.clone(), estimator.clone()).unwrap();
        let start = Instant::now();
        for f in StreamGenerator::new(long_stream(n, 3)).unwrap() {
            engine.ingest(f).unwrap();
        }
        if n == 10_000 {
            secs_10k = start.elapsed().as_secs_f64();
        }
        peaks.push(engine.peak_token_count());
    }
    let pass = peaks.iter().all(|&p| p == peaks[0]) && secs_10k < 60.0;
    verdict(
        1,
        "bounded memory",
        pass,
        format!("peaks {peaks:?} (bound {}), 10k ingest {secs_10k:.1}s", 16 * 64 + 32_768 + 64),
    )
}

fn random_item(rng: &mut ChaCha8Rng, ts: u64) -> MemoryItem {
    let tokens = if rng.gen_bool(0.5) { 4 } else { 2 };
    let data: Vec<f32> = (0..tokens * 6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let surprise = (rng.gen_range(0..20) as f64) / 20.0;
    MemoryItem::new(ts, TokenGrid::new(6, data).unwrap(), surprise, tokens == 2, FrameAnnotation::default())
}

fn cosine_oracle(q: &[f32], tokens: &TokenGrid) -> f64 {
    let n = tokens.len() as f64;
    let mean: Vec<f64> = (0..tokens.dim())
        .map(|j| tokens.tokens().map(|t| t[j] as f64).sum::<f64>() / n)
        .collect();
    let dot: f64 = q.iter().zip(&mean).map(|(a, b)| *a as f64 * b).sum();
    let nq: f64 = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    let nm: f64 = mean.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nq * nm)
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut retrieval_ok = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let mut m = LongTermMemory::new(usize::MAX, ConsolidationStrategy::ForgetLeastSurprise);
        let mut items = Vec::new();
        for t in 0..n {
            let it = random_item(&mut rng, t * 2);
            items.push(it.clone());
            m.push(it).unwrap();
        }
        let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let k = rng.gen_range(1..10);
        let got: Vec<u64> = m.retrieve(&FeatureVector::new(q.clone()).unwrap(), k).unwrap().items.iter().map(|i| i.timestamp).collect();
        let mut scored: Vec<(f64, u64)> = items.iter().map(|i| (cosine_oracle(&q, &i.tokens), i.timestamp)).collect();
        scored.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
            Ordering::Equal => a.1.cmp(&b.1),
            o => o,
        });
        let mut want: Vec<u64> = scored.iter().take(k).map(|s| s.1).collect();
        want.sort_unstable();
        retrieval_ok += usize::from(got == want);
    }

    let mut mra_ok = true;
    for gt in 1..=100u64 {
        for pred in 0..=100u64 {
            let hits = (0..10u64)
                .filter(|&i| {
                    let theta = num_rational::Ratio::new(50 + 5 * i, 100);
                    num_rational::Ratio::new(pred.abs_diff(gt), gt) < num_rational::Ratio::from_integer(1) - theta
                })
                .count();
            mra_ok &= mra(pred, gt).unwrap() == hits as f64 / 10.0;
        }
    }

    let mut evict_ok = 0;
    for case in 0..100 {
        let strategy = if case % 2 == 0 {
            ConsolidationStrategy::ForgetLeastSurprise
        } else {
            ConsolidationStrategy::ForgetOldest
        };
        let n = rng.gen_range(2..30);
        let items: Vec<MemoryItem> = (0..n).map(|t| random_item(&mut rng, t)).collect();
        let total: usize = items.iter().map(MemoryItem::token_count).sum();
        let budget = rng.gen_range(4..=total);
        let mut m = LongTermMemory::new(budget, strategy);
        for it in &items {
            m.push(it.clone()).unwrap();
        }
        m.consolidate().unwrap();
        let mut oracle = items.clone();
        while oracle.iter().map(MemoryItem::token_count).sum::<usize>() > budget {
            let victim = match strategy {
                ConsolidationStrategy::ForgetOldest => 0,
                _ => {
                    let min = oracle.iter().map(|i| i.surprise).fold(f64::INFINITY, f64::min);
                    oracle.iter().position(|i| i.surprise == min).unwrap()
                }
            };
            oracle.remove(victim);
        }
        let got: Vec<u64> = m.items().iter().map(|i| i.timestamp).collect();
        let want: Vec<u64> = oracle.iter().map(|i| i.timestamp).collect();
        let max_kept = match strategy {
            ConsolidationStrategy::ForgetLeastSurprise => {
                let top = items.iter().map(|i| i.surprise).fold(f64::NEG_INFINITY, f64::max);
                m.items().iter().any(|i| i.surprise == top) || m.is_empty()
            }
            _ => true,
        };
        evict_ok += usize::from(got == want && max_kept);
    }
    verdict(
        2,
        "oracle equivalence",
        retrieval_ok == 200 && mra_ok && evict_ok == 100,
        format!("retrieval {retrieval_ok}/200, mra grid exact {mra_ok}, consolidation {evict_ok}/100"),
    )
}

fn criterion_3() -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let x = TokenGrid::new(4, (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let y = TokenGrid::new(4, (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let mut lin = PredictorModel::linear(4, draw);
        lin.randomize(draw, 0.5);
        let mut mlp = PredictorModel::two_layer(4, 8, draw);
        mlp.randomize(draw, 0.5);
        worst.0 = worst.0.max(finite_difference_check(&lin, &x, &y, 1e-5).unwrap());
        worst.1 = worst.1.max(finite_difference_check(&mlp, &x, &y, 1e-5).unwrap());
    }
    verdict(
        3,
        "gradient correctness",
        worst.0 < 1e-3 && worst.1 < 1e-3,
        format!("max relative error linear {:.2e}, two-layer {:.2e}", worst.0, worst.1),
    )
}

fn durations(o: &ExperimentOutcome, suite: SuiteKind) -> Vec<u64> {
    let mut d: Vec<u64> = o.count_rows.iter().filter(|r| r.suite == suite).map(|r| r.duration).collect();
    d.dedup();
    d
}

fn criterion_4(o: &ExperimentOutcome) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for d in durations(o, SuiteKind::Count) {
        let r = o.count_row(SuiteKind::Count, d, Method::SurpriseSeg).unwrap();
        let f1 = r.boundary.map_or(0.0, |b| b.f1);
        pass &= f1 >= 0.9;
        parts.push(format!("{d}: F1 {f1:.3} at tau {}", r.tau.unwrap()));
    }
    verdict(4, "surprise separation", pass, parts.join(", "))
}

fn criterion_5(o: &ExperimentOutcome) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for d in durations(o, SuiteKind::Drift) {
        let pe = o.count_row(SuiteKind::Drift, d, Method::SurpriseSeg).unwrap().auroc.unwrap();
        let adj = o.count_row(SuiteKind::Drift, d, Method::AdjacentSeg).unwrap().auroc.unwrap();
        pass &= pe >= adj;
        parts.push(format!("{d}: {pe:.4} vs {adj:.4} (margin {:+.4})", pe - adj));
    }
    verdict(5, "ablation trend", pass, parts.join(", "))
}

fn criterion_6() -> Verdict {
    let cfg = CountSuiteConfig::default();
    let tasks = build_count_suite(&cfg, Split::Test).unwrap();
    let mut exact = 0;
    for t in &tasks {
        let c = OracleCounter::new(&t.category);
        let annotations: Vec<FrameAnnotation> = StreamGenerator::new(t.spec.clone()).unwrap().map(|f| f.annotation).collect();
        exact += usize::from(gt_segmentation_run(&annotations, &c) == t.gt_total);
    }
    verdict(6, "gt segmentation exactness", exact == tasks.len() && tasks.len() == 200, format!("{exact}/{} exact", tasks.len()))
}

fn criterion_7(o: &ExperimentOutcome) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for d in durations(o, SuiteKind::Count) {
        let s = o.count_row(SuiteKind::Count, d, Method::SurpriseSeg).unwrap().pearson_r.unwrap_or(0.0);
        let f = o.count_row(SuiteKind::Count, d, Method::FixedWindow).unwrap().pearson_r.unwrap_or(0.0);
        pass &= s >= 0.9;
        if d >= 1800 {
            pass &= f <= 0.5;
        }
        parts.push(format!("{d}: r {s:.3} vs window {f:.3}"));
    }
    verdict(7, "scaling trend", pass, parts.join(", "))
}

fn criterion_8(o: &ExperimentOutcome) -> Verdict {
    let mut ds: Vec<u64> = o.recall_rows.iter().map(|r| r.duration).collect();
    ds.dedup();
    let acc = |d, m| o.recall_row(d, m).unwrap().accuracy;
    let (short, long) = (ds[0], *ds.last().unwrap());
    let mut pass = (acc(long, Method::SurpriseMemory) - acc(short, Method::SurpriseMemory)).abs() <= 0.10;
    let mut parts = Vec::new();
    for &d in &ds {
        let (e, f) = (acc(d, Method::SurpriseMemory), acc(d, Method::FixedWindow));
        if d >= 1800 {
            pass &= e > f;
        }
        parts.push(format!("{d}: {e:.3} vs window {f:.3}"));
    }
    let sixty = o.recall_rows.iter().all(|r| r.n == 60);
    verdict(8, "recall robustness", pass && sixty, parts.join(", "))
}

fn criterion_9(cfg: &ExperimentConfig, o: &ExperimentOutcome) -> Verdict {
    let (model, _) = predsense_core::harness::prepare_predictor(cfg, SuiteKind::Count).unwrap();
    let suite = build_count_suite(cfg.count.as_ref().unwrap(), Split::Test).unwrap();
    let mut ok = 0;
    for t in &suite {
        let tau = o.sweep.tau(SuiteKind::Count, Method::SurpriseSeg, t.duration).unwrap();
        let seg = predsense_core::segmentation::SegmentConfig {
            threshold: tau,
            ..cfg.segment.clone()
        };
        let est = SurpriseEstimator::prediction_error(model.clone());
        let frames: Vec<_> = StreamGenerator::new(t.spec.clone()).unwrap().collect();
        let mut l = EventLoop::with_estimator(seg.clone(), OracleCounter::new(&t.category), est.clone()).unwrap();
        let last = t.duration - 1;
        let mut queries = t.query_timestamps.clone();
        if queries.last() != Some(&last) {
            queries.push(last);
        }
        let (answers, _) = l.run_with_queries(&frames, &queries).unwrap();
        let (batch, _) = process_stream(seg, OracleCounter::new(&t.category), est, &frames).unwrap();
        let monotone = answers.windows(2).all(|w| w[0].1 <= w[1].1);
        ok += usize::from(answers.last().unwrap().1 == batch && monotone);
    }
    verdict(9, "streaming consistency", ok == suite.len(), format!("{ok}/{} tasks consistent and non-decreasing", suite.len()))
}

fn criterion_10() -> Verdict {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "determinism".into();
    cfg.tune_tasks_per_duration = 2;
    cfg.predictor.train_streams = 2;
    cfg.predictor.training.epochs = 2;
    {
        let r = cfg.recall.as_mut().unwrap();
        r.durations = vec![600, 1800];
        r.tasks_per_duration = 3;
    }
    for c in [cfg.count.as_mut().unwrap(), cfg.drift.as_mut().unwrap()] {
        c.durations = vec![600, 1800];
        c.tasks_per_duration = 3;
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = run_experiment(&cfg, a.path()).unwrap();
    let ob = run_experiment(&cfg, b.path()).unwrap();
    let mut same = oa.all_completed() && ob.all_completed();
    for f in ["summary_count.csv", "summary_recall.csv", "sweep.csv"] {
        same &= std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
    }
    verdict(10, "determinism", same, "summary_count.csv, summary_recall.csv, sweep.csv compared byte for byte".into())
}

fn main() {
    let start = Instant::now();
    let mut verdicts = vec![criterion_1(), criterion_2(), criterion_3()];

    let cfg = ExperimentConfig::default();
    let out = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&cfg, out.path()).unwrap();
    assert!(outcome.all_completed(), "failed tasks: {:?}", outcome.failed);
    verdicts.push(criterion_4(&outcome));
    verdicts.push(criterion_5(&outcome));
    verdicts.push(criterion_6());
    verdicts.push(criterion_7(&outcome));
    verdicts.push(criterion_8(&outcome));
    verdicts.push(criterion_9(&cfg, &outcome));
    verdicts.push(criterion_10());
    verdicts.sort_by_key(|v| v.id);

    for v in &verdicts {
        println!("criterion {:>2} {:<26} {}  {}", v.id, v.name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance suite finished in {:.1}s", start.elapsed().as_secs_f64());
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
