//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so every criterion reports even when an earlier
//! one fails; the process exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use affectkit::autodiff::{read_checkpoint, write_checkpoint};
use affectkit::fusion::{decision_level_fuse, EnsembleMember, VaPrediction};
use affectkit::gradcheck::run_suite;
use affectkit::harness::ops::{parse_va, va_csv};
use affectkit::harness::{
    evaluate, generate_dataset, load_model, parse_predictions, predict_samples, prediction_records, predictions_csv,
    run_training, train, Dataset, RunConfig, SyntheticSpec, TaskCounts,
};
use affectkit::preprocess::{fit_alignment, spectrogram, Affine, LandmarkSet, SpectrogramConfig};
use affectkit::relatedness::{
    coannotate_aus_to_emotion, coannotate_emotion_to_aus, coannotation_scores, emotion_au_mixture,
};
use affectkit::sampler::aligned_batch_sizes;
use affectkit::zeroshot::{classify_compound, default_compound_defs, valence_bonus};
use affectkit::{
    ccc, AUVector, Coupling, ExpressionLabel, Head, LossWeights, MetricReport, PredictionRecord, RelatednessTable,
    SeriesPair, Split, Task, TaskPartition, AU_IDS, NUM_AUS, NUM_EXPRESSIONS,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    check((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol:e})"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let results = run_suite(50, 2024)?;
    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &results {
        check(r.passed(), || {
            format!("{} max relative error {:.3e}", r.name, r.max_rel_error)
        })?;
    }
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks at 50 points, worst {worst:.2e}, {elapsed:.1?}",
        results.len()
    ))
}

/// CCC from pairwise differences, independent of the moment formula:
/// `s_xy = Σ_ij (x_i − x_j)(y_i − y_j) / (2N²)`.
fn ccc_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let pair = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..a.len() {
            for j in 0..a.len() {
                s += (a[i] - a[j]) * (b[i] - b[j]);
            }
        }
        s / (2.0 * n * n)
    };
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    2.0 * pair(x, y) / (pair(x, x) + pair(y, y) + (mx - my).powi(2))
}

fn ccc_of(x: &[f64], y: &[f64]) -> Result<f64, String> {
    let pair = SeriesPair::new(x, y).map_err(|e| e.to_string())?;
    Ok(ccc(pair).map_err(|e| e.to_string())?.value)
}

fn ccc_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        close(ccc_of(&x, &x)?, 1.0, 1e-12, "ccc(x, x)")?;
        close(ccc_of(&x, &y)?, ccc_of(&y, &x)?, 1e-15, "symmetry")?;
        close(ccc_of(&x, &y)?, ccc_oracle(&x, &y), 1e-9, "random pair vs oracle")?;
        let c = rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        check(ccc_of(&x, &shifted)? < 1.0, || format!("shift {c} not penalised"))?;
    }
    let anti = ccc_of(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0])?;
    check(anti == -1.0, || format!("antisymmetric example gave {anti}"))?;
    let (x, y) = ([0.5, 0.0, -0.5], [0.4, 0.1, -0.3]);
    let worked = ccc_of(&x, &y)?;
    close(worked, ccc_oracle(&x, &y), 1e-9, "worked example")?;
    close(worked, 0.9211, 5e-5, "worked example")?;
    Ok(format!(
        "identity, symmetry, shift and oracle agreement; worked example {worked:.6}"
    ))
}

fn coupling() -> Outcome {
    let table = RelatednessTable::cognitive();
    let mut p = [0.0; NUM_EXPRESSIONS];
    p[ExpressionLabel::HAPPINESS.index()] = 1.0;
    let q = emotion_au_mixture(&p, &table, false).map_err(|e| e.to_string())?;
    for (i, &id) in AU_IDS.iter().enumerate() {
        let want = if [12, 25, 6].contains(&id) { 1.0 } else { 0.0 };
        check(q[i] == want, || format!("q(AU{id}) = {}", q[i]))?;
    }

    let mut aus = AUVector {
        values: [false; NUM_AUS],
        mask: [true; NUM_AUS],
    };
    for (i, &id) in AU_IDS.iter().enumerate() {
        aus.values[i] = [12, 25, 6].contains(&id);
    }
    let scores = coannotation_scores(&aus, &table, true).map_err(|e| e.to_string())?;
    let happy = scores[ExpressionLabel::HAPPINESS.index()];
    close(happy, 1.0, 1e-12, "soft score")?;

    for e in ExpressionLabel::BASIC {
        let mut v = AUVector {
            values: [false; NUM_AUS],
            mask: [true; NUM_AUS],
        };
        for t in coannotate_emotion_to_aus(e, &table) {
            let i = AU_IDS.iter().position(|&a| u32::from(a) == t.au_id).expect("known AU");
            v.values[i] = t.target;
        }
        let back = coannotate_aus_to_emotion(&v, &table);
        check(back == Some(e), || format!("{} came back as {back:?}", e.name()))?;
    }
    Ok("happiness mixture, soft score 1.0, round-trip for 6 emotions".into())
}

fn sampler() -> Outcome {
    for k in [1usize, 3, 10, 57] {
        let sizes = [401 * k, 247 * k, 103 * k];
        let got = aligned_batch_sizes(&sizes, 751).map_err(|e| e.to_string())?;
        check(got == [401, 247, 103], || format!("sizes {sizes:?} gave {got:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let k = rng.random_range(1..5);
        let mut ids: Vec<usize> = (0..rng.random_range(k..400)).collect();
        ids.shuffle(&mut rng);
        let mut cuts: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..=ids.len())).collect();
        cuts.sort_unstable();
        let mut sets = Vec::new();
        let mut last = 0;
        for c in cuts.into_iter().chain([ids.len()]) {
            sets.push(ids[last..c].to_vec());
            last = c;
        }
        let nonempty = sets.iter().filter(|s| !s.is_empty()).count();
        let total = rng.random_range(nonempty.max(1)..64);
        let part = TaskPartition::aligned(sets, total).map_err(|e| format!("trial {trial}: {e}"))?;
        let mut expected: BTreeMap<usize, usize> = BTreeMap::new();
        for &id in &ids {
            *expected.entry(id).or_default() += 1;
        }
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for batch in part.epoch(trial, 0, true) {
            for (set, chunk) in batch.iter().enumerate() {
                check(chunk.len() <= part.batch_sizes()[set], || {
                    format!("trial {trial}: oversized chunk")
                })?;
                for &id in chunk {
                    *seen.entry(id).or_default() += 1;
                }
            }
        }
        check(seen == expected, || format!("trial {trial}: epoch multiset differs"))?;
    }
    Ok("(401, 247, 103) of 751; exactly-once coverage on 20 partitions".into())
}

#[derive(Default, Clone, Copy)]
struct ArmScores {
    au_f1: f64,
    expr_md: f64,
    expr_acc: f64,
}

fn coupling_benefit() -> Outcome {
    const SEEDS: u64 = 5;
    let start = Instant::now();
    let table = RelatednessTable::cognitive();
    let spec = SyntheticSpec {
        train: TaskCounts::new(600, 600, 600),
        val: TaskCounts::new(0, 0, 0),
        test: TaskCounts::new(200, 200, 200),
        kappa: 0.9,
        sigma: 0.2,
        ..SyntheticSpec::default()
    };
    // The masked AU cross-entropy averages over AUs while distribution
    // matching sums over them; weighting the AU term by the AU count keeps
    // the two on the same per-AU scale.
    let weights = LossWeights::new(NUM_AUS as f64, 1.0).map_err(|e| e.to_string())?;
    let base = RunConfig {
        epochs: 30,
        lr: 1e-3,
        batch_size: 30,
        weights,
        ..RunConfig::default()
    };
    let arm = |data: &Dataset, seed: u64, heads: Vec<Head>, coupling: Coupling, batch_size: usize| {
        let cfg = RunConfig {
            seed,
            heads,
            coupling,
            batch_size,
            ..base.clone()
        };
        let model = train(&cfg, data, None, None).map_err(|e| e.to_string())?.model;
        let tasks: Vec<Task> = [(Task::Expr, Head::Expr), (Task::Au, Head::Au)]
            .into_iter()
            .filter(|&(_, h)| model.spec().has_head(h))
            .map(|(t, _)| t)
            .collect();
        let r = evaluate(&model, &data.split(Split::Test), &tasks, 0.5).map_err(|e| e.to_string())?;
        let get = |k: &str| r.get(k).unwrap_or(f64::NAN) / SEEDS as f64;
        Ok::<_, String>(ArmScores {
            au_f1: get("au.f1_macro"),
            expr_md: get("expr.mean_diagonal"),
            expr_acc: get("expr.accuracy"),
        })
    };
    let all = vec![Head::Va, Head::Expr, Head::Au];
    let (mut coupled, mut plain, mut single) = (ArmScores::default(), ArmScores::default(), ArmScores::default());
    for seed in 0..SEEDS {
        let data = generate_dataset(&spec, &table, 1000 + seed).map_err(|e| e.to_string())?;
        for (acc, s) in [
            (&mut coupled, arm(&data, seed, all.clone(), Coupling::SoftAndDistr, 30)?),
            (&mut plain, arm(&data, seed, all.clone(), Coupling::None, 30)?),
            (&mut single, arm(&data, seed, vec![Head::Expr], Coupling::None, 10)?),
        ] {
            acc.au_f1 += s.au_f1;
            acc.expr_md += s.expr_md;
            acc.expr_acc += s.expr_acc;
        }
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "AU F1 {:.4} vs {:.4}; EXPR mean diag {:.4} vs {:.4}; EXPR acc {:.4} vs single {:.4} (uncoupled {:.4}); {elapsed:.1?}",
        coupled.au_f1, plain.au_f1, coupled.expr_md, plain.expr_md, coupled.expr_acc, single.expr_acc, plain.expr_acc
    );
    const FLOOR: f64 = -0.01;
    let failures: Vec<&str> = [
        (coupled.au_f1 - plain.au_f1 >= FLOOR, "coupled AU F1 below uncoupled"),
        (
            coupled.expr_md - plain.expr_md >= FLOOR,
            "coupled EXPR mean diagonal below uncoupled",
        ),
        (
            coupled.expr_acc - single.expr_acc >= FLOOR,
            "coupled EXPR accuracy below single-task",
        ),
        (elapsed < Duration::from_secs(300), "over five minutes"),
    ]
    .into_iter()
    .filter(|(ok, _)| !ok)
    .map(|(_, why)| why)
    .collect();
    check(failures.is_empty(), || format!("{}: {summary}", failures.join(", ")))?;
    Ok(summary)
}

fn fusion() -> Outcome {
    let member = |id: &str, w: f64, v: f64| EnsembleMember {
        member_id: id.into(),
        val_ccc: [w, w],
        predictions: vec![VaPrediction {
            key: "f0".into(),
            va: [v, v],
        }],
    };
    let fused = decision_level_fuse(&[member("a", 0.4, 0.2), member("b", 0.6, 0.5)]).map_err(|e| e.to_string())?;
    check(fused[0].va[0] == 0.38, || {
        format!("worked example gave {}", fused[0].va[0])
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames = 1000;
    let members: Vec<EnsembleMember> = (0..rng.random_range(2..6))
        .map(|m| EnsembleMember {
            member_id: format!("m{m}"),
            val_ccc: [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)],
            predictions: (0..frames)
                .map(|f| VaPrediction {
                    key: format!("f{f}"),
                    va: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                })
                .collect(),
        })
        .collect();
    let fused = decision_level_fuse(&members).map_err(|e| e.to_string())?;
    check(fused.len() == frames, || format!("{} fused frames", fused.len()))?;
    for (f, p) in fused.iter().enumerate() {
        for d in 0..2 {
            let vals = members.iter().map(|m| m.predictions[f].va[d]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            check(p.va[d] >= lo - 1e-12 && p.va[d] <= hi + 1e-12, || {
                format!("frame {f} outside member range")
            })?;
        }
    }
    Ok("worked example 0.38; 1000 frames within member range".into())
}

fn random_record(rng: &mut ChaCha8Rng, i: usize) -> PredictionRecord {
    let mut expr = [0.0; NUM_EXPRESSIONS];
    for e in &mut expr {
        *e = rng.random_range(0.0..1.0);
    }
    let s: f64 = expr.iter().sum();
    expr.iter_mut().for_each(|e| *e /= s);
    let mut au = [0.0; NUM_AUS];
    for a in &mut au {
        *a = rng.random_range(0.0..1.0);
    }
    PredictionRecord {
        id: format!("r{i}"),
        frame_index: None,
        valence: [rng.random_range(-1.0..1.0), 0.0][usize::from(rng.random_bool(0.05))],
        arousal: rng.random_range(-1.0..1.0),
        expr_probs: expr,
        au_probs: au,
    }
}

fn zero_shot() -> Outcome {
    let table = RelatednessTable::cognitive();
    let defs = default_compound_defs(&table);
    check(defs.len() == 11, || format!("{} default defs", defs.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let rec = random_record(&mut rng, i);
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (k, d) in defs.iter().enumerate() {
            // Union of the two emotion rows, keeping the larger weight.
            let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
            for e in [d.emo1, d.emo2] {
                let row = table.row(e).expect("basic emotion row");
                for &au in &row.prototypical {
                    weights.insert(au, 1.0);
                }
                for &(au, w) in &row.observational {
                    let entry = weights.entry(au).or_insert(0.0);
                    *entry = entry.max(w);
                }
            }
            let (num, den) = weights.iter().fold((0.0, 0.0), |(n, s), (&au, &w)| {
                let idx = AU_IDS.iter().position(|&a| u32::from(a) == au).expect("known AU");
                (n + w * rec.au_probs[idx], s + w)
            });
            let mut score = num / den + rec.expr_probs[d.emo1.index()] + rec.expr_probs[d.emo2.index()];
            if d.emo1 == ExpressionLabel::HAPPINESS || d.emo2 == ExpressionLabel::HAPPINESS {
                score += if rec.valence > 0.0 {
                    1.0
                } else if rec.valence < 0.0 {
                    0.0
                } else {
                    0.5
                };
            }
            if score > best.1 {
                best = (k, score);
            }
        }
        let got = classify_compound(&defs, &rec).map_err(|e| e.to_string())?;
        check(got == best.0, || format!("record {i}: {got} vs oracle {}", best.0))?;
    }
    check(
        valence_bonus(0.3) == 1.0 && valence_bonus(-0.3) == 0.0 && valence_bonus(0.0) == 0.5,
        || "valence bonus".into(),
    )?;
    Ok("1000 records match the exhaustive oracle; bonus 1/0/0.5".into())
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let planted = Affine {
            m: [
                [
                    rng.random_range(0.5..2.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-50.0..50.0),
                ],
                [
                    rng.random_range(-0.5..0.5),
                    rng.random_range(0.5..2.0),
                    rng.random_range(-50.0..50.0),
                ],
            ],
        };
        let mut src = [[0.0; 2]; 5];
        for p in &mut src {
            *p = [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)];
        }
        let dst = src.map(|p| planted.apply(p));
        let source = LandmarkSet::new(src).map_err(|e| e.to_string())?;
        let target = LandmarkSet::new(dst).map_err(|e| e.to_string())?;
        let fit = fit_alignment(&source, &target).map_err(|e| format!("case {case}: {e}"))?;
        check(fit.residual < 1e-9, || {
            format!("case {case}: residual {:e}", fit.residual)
        })?;
        for r in 0..2 {
            for c in 0..3 {
                let err = (fit.affine.m[r][c] - planted.m[r][c]).abs();
                worst = worst.max(err);
                check(err < 1e-7, || format!("case {case}: m[{r}][{c}] off by {err:e}"))?;
            }
        }
    }

    let cfg = SpectrogramConfig::default();
    check(cfg.window_samples() == 1455 && cfg.hop_samples() == 970, || {
        format!("window {} hop {}", cfg.window_samples(), cfg.hop_samples())
    })?;
    for _ in 0..100 {
        let n = rng.random_range(1455..30_000);
        let signal: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = spectrogram(&signal, &cfg).map_err(|e| e.to_string())?.frames;
        let expected = (n - 1455) / 970 + 1;
        check(frames == expected && cfg.frame_count(n) == Some(expected), || {
            format!("length {n}: {frames} frames, expected {expected}")
        })?;
    }
    check(cfg.frame_count(1454).is_none(), || "short signal".into())?;
    Ok(format!(
        "100 planted affines (worst coefficient error {worst:.1e}); 1455/970 framing on 100 lengths"
    ))
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let table = RelatednessTable::cognitive();
    let spec = SyntheticSpec {
        train: TaskCounts::new(60, 60, 60),
        val: TaskCounts::new(20, 20, 20),
        test: TaskCounts::new(30, 30, 30),
        ..SyntheticSpec::default()
    };
    let data_dir = dir.join("data");
    generate_dataset(&spec, &table, 99)
        .and_then(|d| d.write_dir(&data_dir))
        .map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        seed: 5,
        epochs: 3,
        lr: 1e-2,
        dropout: 0.2,
        coupling: Coupling::SoftAndDistr,
        data: Some(data_dir.clone()),
        out: Some(dir.join("model.afmt")),
        log: Some(dir.join("log.csv")),
        ..RunConfig::default()
    };
    run_training(&cfg, None).map_err(|e| e.to_string())?;
    let model = load_model(&dir.join("model.afmt")).map_err(|e| e.to_string())?;
    let data = Dataset::read_dir(&data_dir).map_err(|e| e.to_string())?;
    let test = data.split(Split::Test);
    let report = evaluate(&model, &test, &[], 0.5).map_err(|e| e.to_string())?;
    let outputs = predict_samples(&model, &test).map_err(|e| e.to_string())?;
    let preds = predictions_csv(&prediction_records(&test, &outputs)).map_err(|e| e.to_string())?;

    let mut files = BTreeMap::new();
    for name in [
        "annotations.csv",
        "features.csv",
        "model.afmt",
        "model.afmt.cfg",
        "log.csv",
    ] {
        let p = if name.ends_with(".csv") && name != "log.csv" {
            data_dir.join(name)
        } else {
            dir.join(name)
        };
        files.insert(
            name.to_string(),
            std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?,
        );
    }
    files.insert("report".into(), report.render().into_bytes());
    files.insert("predictions.csv".into(), preds.into_bytes());
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    for (name, bytes) in &first {
        check(second.get(name) == Some(bytes), || {
            format!("{name} differs between runs")
        })?;
    }

    let ckpt = &first["model.afmt"];
    let params = read_checkpoint(ckpt.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_checkpoint(&params, &mut again).map_err(|e| e.to_string())?;
    check(&again == ckpt, || "checkpoint round-trip changed bytes".into())?;

    let data = Dataset::read_dir(&a.path().join("data")).map_err(|e| e.to_string())?;
    let out = a.path().join("copy");
    data.write_dir(&out).map_err(|e| e.to_string())?;
    for name in ["annotations.csv", "features.csv"] {
        let copy = std::fs::read(out.join(name)).map_err(|e| e.to_string())?;
        check(copy == first[name], || format!("{name} round-trip changed bytes"))?;
    }

    let preds = String::from_utf8(first["predictions.csv"].clone()).expect("utf-8");
    let again = predictions_csv(&parse_predictions(&preds).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    check(again == preds, || "predictions round-trip changed bytes".into())?;

    let va = va_csv(
        &decision_level_fuse(&[EnsembleMember {
            member_id: "m".into(),
            val_ccc: [1.0, 1.0],
            predictions: parse_va(&preds).map_err(|e| e.to_string())?,
        }])
        .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    check(
        va_csv(&parse_va(&va).map_err(|e| e.to_string())?).map_err(|e| e.to_string())? == va,
        || "fused CSV round-trip changed bytes".into(),
    )?;

    let report = String::from_utf8(first["report"].clone()).expect("utf-8");
    let parsed = MetricReport::parse(&report).ok_or("report does not parse")?;
    check(parsed.render() == report, || "report round-trip changed bytes".into())?;
    Ok(format!(
        "{} artefacts identical across runs; checkpoint, dataset, prediction, fused and report round-trips exact",
        first.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient fidelity", gradients),
        ("CCC suite", ccc_suite),
        ("coupling correctness", coupling),
        ("sampler", sampler),
        ("coupling benefit", coupling_benefit),
        ("fusion", fusion),
        ("zero-shot", zero_shot),
        ("preprocessing", preprocessing),
        ("determinism and formats", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
