//! Batched inference over annotated samples, metric reports and the
//! prediction CSV.

use std::collections::BTreeMap;

use super::dataset::{frame_input, group_sequences};
use super::HarnessError;
use crate::affect_types::{AnnotatedSample, Label, PredictionRecord, Task, NUM_AUS, NUM_EXPRESSIONS};
use crate::metrics::{
    accuracy, ccc, e_total_au, e_total_expr, macro_f1, mean_diagonal, mse, multilabel_scores, ConfusionMatrix,
    MetricError, MetricReport, Score, SeriesPair,
};
use crate::models::{FrameInput, FrameOutput, Head, Model, SequenceBatch};

/// Sequences per inference batch.
const PREDICT_CHUNK: usize = 256;

/// One output per sample, in input order. Samples sharing a sequence id
/// are run as one sequence; sequences of equal length are batched.
pub fn predict_samples(model: &Model, samples: &[&AnnotatedSample]) -> Result<Vec<FrameOutput>, HarnessError> {
    let groups = group_sequences(samples);
    let mut by_len: BTreeMap<usize, Vec<&Vec<usize>>> = BTreeMap::new();
    for g in &groups {
        by_len.entry(g.len()).or_default().push(g);
    }
    let mut out = vec![FrameOutput::default(); samples.len()];
    for (_, seqs) in by_len {
        for chunk in seqs.chunks(PREDICT_CHUNK) {
            let inputs: Vec<Vec<FrameInput>> = chunk
                .iter()
                .map(|g| g.iter().map(|&i| frame_input(samples[i])).collect())
                .collect();
            let batch = SequenceBatch::from_sequences(&inputs)?;
            let frames = model.predict(&batch)?;
            for (b, g) in chunk.iter().enumerate() {
                for (t, &i) in g.iter().enumerate() {
                    out[i] = frames[batch.row_index(b, t)].clone();
                }
            }
        }
    }
    Ok(out)
}

/// Prediction records for the CSV; heads the model lacks are NaN.
pub fn prediction_records(samples: &[&AnnotatedSample], outputs: &[FrameOutput]) -> Vec<PredictionRecord> {
    samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| {
            let va = o.va.unwrap_or([f64::NAN; 2]);
            PredictionRecord {
                id: s.id.clone(),
                frame_index: s.frame_index,
                valence: va[0],
                arousal: va[1],
                expr_probs: o.expr.unwrap_or([f64::NAN; NUM_EXPRESSIONS]),
                au_probs: o.au.unwrap_or([f64::NAN; NUM_AUS]),
            }
        })
        .collect()
}

fn head_for(task: Task, model: &Model) -> Option<Head> {
    match task {
        Task::Va => Some(Head::Va),
        Task::Expr => Some(Head::Expr),
        Task::Au => Some(Head::Au),
        Task::Compound => model.spec().compound_classes().map(Head::Compound),
    }
    .filter(|h| model.spec().has_head(*h))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

/// Mean recall over the classes that occur in the truth.
fn mean_diagonal_present(cm: &ConfusionMatrix) -> f64 {
    match mean_diagonal(cm) {
        Ok(v) => v,
        Err(_) => {
            let rows: Vec<f64> = cm
                .counts()
                .iter()
                .enumerate()
                .filter_map(|(k, r)| {
                    let n: u64 = r.iter().sum();
                    (n > 0).then(|| r[k] as f64 / n as f64)
                })
                .collect();
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().sum::<f64>() / rows.len() as f64
            }
        }
    }
}

fn push_score(report: &mut MetricReport, name: &str, s: Score) {
    report.push(name, s.value);
    if s.degenerate {
        report.push(format!("{name}.degenerate"), 1.0);
    }
}

/// Evaluate `tasks` (all tasks with a head and samples when empty) on
/// `samples`. Requesting a task the model has no head for is an error.
pub fn evaluate(
    model: &Model,
    samples: &[&AnnotatedSample],
    tasks: &[Task],
    au_threshold: f64,
) -> Result<MetricReport, HarnessError> {
    let tasks: Vec<Task> = if tasks.is_empty() {
        [Task::Va, Task::Expr, Task::Au, Task::Compound]
            .into_iter()
            .filter(|&t| head_for(t, model).is_some() && samples.iter().any(|s| s.label.task() == t))
            .collect()
    } else {
        for &t in tasks {
            if head_for(t, model).is_none() {
                return Err(HarnessError::IncompatibleHeads(t));
            }
        }
        tasks.to_vec()
    };
    let relevant: Vec<&AnnotatedSample> = samples
        .iter()
        .copied()
        .filter(|s| tasks.contains(&s.label.task()))
        .collect();
    let outputs = predict_samples(model, &relevant)?;
    let mut report = MetricReport::new();
    for task in tasks {
        let idx: Vec<usize> = (0..relevant.len())
            .filter(|&i| relevant[i].label.task() == task)
            .collect();
        let key = task.as_str().to_ascii_lowercase();
        report.push(format!("{key}.n"), idx.len() as f64);
        if idx.is_empty() {
            continue;
        }
        match task {
            Task::Va => {
                let mut p = [Vec::new(), Vec::new()];
                let mut t = [Vec::new(), Vec::new()];
                for &i in &idx {
                    let o = outputs[i].va.expect("head checked");
                    if let Label::Va(va) = &relevant[i].label {
                        p[0].push(o[0]);
                        p[1].push(o[1]);
                        t[0].push(va.valence);
                        t[1].push(va.arousal);
                    }
                }
                let mut mean = 0.0;
                for (d, name) in ["v", "a"].iter().enumerate() {
                    let s = match ccc(SeriesPair::new(&p[d], &t[d])?) {
                        Ok(s) => s,
                        Err(MetricError::TooShort { .. }) => Score {
                            value: 0.0,
                            degenerate: true,
                        },
                        Err(e) => return Err(e.into()),
                    };
                    mean += 0.5 * s.value;
                    push_score(&mut report, &format!("va.ccc_{name}"), s);
                    report.push(format!("va.mse_{name}"), mse(SeriesPair::new(&p[d], &t[d])?)?);
                }
                report.push("va.ccc_mean", mean);
            }
            Task::Expr | Task::Compound => {
                let classes = match task {
                    Task::Expr => NUM_EXPRESSIONS,
                    _ => model.spec().compound_classes().expect("head checked"),
                };
                let mut pred = Vec::new();
                let mut truth = Vec::new();
                for &i in &idx {
                    let o = &outputs[i];
                    match &relevant[i].label {
                        Label::Expr(e) => {
                            pred.push(argmax(&o.expr.expect("head checked")));
                            truth.push(e.index());
                        }
                        Label::Compound(c) => {
                            pred.push(argmax(o.compound.as_deref().expect("head checked")));
                            truth.push(*c);
                        }
                        _ => unreachable!("filtered by task"),
                    }
                }
                let f1 = macro_f1(&pred, &truth, classes)?;
                let acc = accuracy(&pred, &truth)?;
                let cm = ConfusionMatrix::from_labels(&pred, &truth, classes)?;
                push_score(&mut report, &format!("{key}.f1_macro"), f1);
                report.push(format!("{key}.accuracy"), acc);
                report.push(format!("{key}.mean_diagonal"), mean_diagonal_present(&cm));
                if task == Task::Expr {
                    report.push("expr.e_total", e_total_expr(f1.value, acc)?);
                }
            }
            Task::Au => {
                let mut probs = Vec::new();
                let mut truth = Vec::new();
                let mut mask = Vec::new();
                for &i in &idx {
                    if let Label::Au(a) = &relevant[i].label {
                        probs.push(outputs[i].au.expect("head checked").to_vec());
                        truth.push(a.values.to_vec());
                        mask.push(a.mask.to_vec());
                    }
                }
                let s = multilabel_scores(&probs, &truth, &mask, au_threshold)?;
                report.push("au.f1_macro", s.mean_f1());
                report.push("au.accuracy", s.mean_accuracy());
                report.push("au.afa", s.afa());
                report.push("au.e_total", e_total_au(s.mean_f1(), s.mean_accuracy())?);
            }
        }
    }
    Ok(report)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// `id,frame_index,valence,arousal,expr_probs,au_probs` with the
/// probability vectors `;`-joined.
pub fn predictions_csv(records: &[PredictionRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "frame_index", "valence", "arousal", "expr_probs", "au_probs"])?;
    for r in records {
        w.write_record([
            r.id.clone(),
            r.frame_index.map(|f| f.to_string()).unwrap_or_default(),
            r.valence.to_string(),
            r.arousal.to_string(),
            join(&r.expr_probs),
            join(&r.au_probs),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Data {
        file: "predictions".into(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |m: String| HarnessError::Data {
            file: "predictions".into(),
            line,
            message: m,
        };
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", rec.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        let vec = |s: &str| s.split(';').map(num).collect::<Result<Vec<f64>, _>>();
        let frame_index = match &rec[1] {
            "" => None,
            f => Some(f.parse().map_err(|_| err(format!("bad frame index {f:?}")))?),
        };
        out.push(PredictionRecord {
            id: rec[0].to_string(),
            frame_index,
            valence: num(&rec[2])?,
            arousal: num(&rec[3])?,
            expr_probs: vec(&rec[4])?
                .try_into()
                .map_err(|_| err("expected 7 expression probabilities".into()))?,
            au_probs: vec(&rec[5])?
                .try_into()
                .map_err(|_| err("expected 17 AU probabilities".into()))?,
        });
    }
    Ok(out)
}
