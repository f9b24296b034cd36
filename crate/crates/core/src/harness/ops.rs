//! File-level orchestration for fusion, post-processing and zero-shot
//! classification.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::dataset::{group_sequences, Dataset};
use super::eval::parse_predictions;
use super::HarnessError;
use crate::affect_types::{AnnotatedSample, Label, PredictionRecord};
use crate::fusion::{
    decision_level_fuse, parse_manifest, select_postprocess, utterance_aggregate, EnsembleMember, PostProcess,
    VaPrediction,
};
use crate::models::median;
use crate::zeroshot::{classify_compound, CompoundClassDef};

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// VA columns of a member file: either full predictions or the
/// three-column `id,valence,arousal` layout `va_csv` writes.
pub fn parse_va(text: &str) -> Result<Vec<VaPrediction>, HarnessError> {
    let three = text.lines().next().is_some_and(|h| h.split(',').count() == 3);
    if !three {
        return Ok(parse_predictions(text)?
            .into_iter()
            .map(|r| VaPrediction {
                key: r.id,
                va: [r.valence, r.arousal],
            })
            .collect());
    }
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| HarnessError::Data {
                file: "predictions".into(),
                line: i + 2,
                message: format!("bad number {s:?}"),
            })
        };
        out.push(VaPrediction {
            key: rec[0].to_string(),
            va: [num(&rec[1])?, num(&rec[2])?],
        });
    }
    Ok(out)
}

/// Fuse the prediction files named by a manifest. Relative member paths
/// are resolved against the manifest's directory.
pub fn fuse_manifest(manifest: &Path) -> Result<Vec<VaPrediction>, HarnessError> {
    let entries = parse_manifest(&read(manifest)?)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut members = Vec::with_capacity(entries.len());
    for e in entries {
        let p = Path::new(&e.path);
        let p = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        let predictions = parse_va(&read(&p)?)?;
        members.push(EnsembleMember {
            member_id: e.member_id,
            val_ccc: e.val_ccc,
            predictions,
        });
    }
    Ok(decision_level_fuse(&members)?)
}

/// `id,valence,arousal`.
pub fn va_csv(preds: &[VaPrediction]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "valence", "arousal"])?;
    for p in preds {
        w.write_record([p.key.clone(), p.va[0].to_string(), p.va[1].to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Data {
        file: "fused".into(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Per-sequence series of predictions keyed by sample id, ordered by
/// frame. Ids without a prediction are skipped.
fn sequences<'a>(
    preds: &HashMap<&str, [f64; 2]>,
    samples: &[&'a AnnotatedSample],
) -> Vec<Vec<(&'a AnnotatedSample, [f64; 2])>> {
    group_sequences(samples)
        .into_iter()
        .map(|g| {
            g.into_iter()
                .filter_map(|i| preds.get(samples[i].id.as_str()).map(|p| (samples[i], *p)))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn index(preds: &[VaPrediction]) -> HashMap<&str, [f64; 2]> {
    preds.iter().map(|p| (p.key.as_str(), p.va)).collect()
}

/// Choose post-processing per dimension on validation predictions whose
/// samples carry VA labels.
pub fn select_va_postprocess(preds: &[VaPrediction], truth: &Dataset) -> Result<[(PostProcess, f64); 2], HarnessError> {
    let samples: Vec<&AnnotatedSample> = truth
        .samples
        .iter()
        .filter(|s| matches!(s.label, Label::Va(_)))
        .collect();
    let seqs = sequences(&index(preds), &samples);
    let mut out = [(PostProcess::default(), 0.0); 2];
    for (d, slot) in out.iter_mut().enumerate() {
        let series: Vec<(Vec<f64>, Vec<f64>)> = seqs
            .iter()
            .map(|s| {
                s.iter()
                    .map(|(smp, p)| {
                        let Label::Va(va) = &smp.label else {
                            unreachable!("filtered")
                        };
                        (p[d], if d == 0 { va.valence } else { va.arousal })
                    })
                    .unzip()
            })
            .collect();
        *slot = select_postprocess(&series)?;
    }
    Ok(out)
}

/// Apply per-dimension post-processing along each sequence of `layout`.
/// Predictions whose id is not in `layout` pass through unchanged.
pub fn apply_va_postprocess(
    preds: &[VaPrediction],
    layout: &Dataset,
    post: [PostProcess; 2],
) -> Result<Vec<VaPrediction>, HarnessError> {
    let samples: Vec<&AnnotatedSample> = layout.samples.iter().collect();
    let idx = index(preds);
    let mut replaced: HashMap<String, [f64; 2]> = HashMap::new();
    for seq in sequences(&idx, &samples) {
        let mut dims = [Vec::new(), Vec::new()];
        for (d, pp) in post.iter().enumerate() {
            let series: Vec<f64> = seq.iter().map(|(_, p)| p[d]).collect();
            dims[d] = pp.apply(&series)?;
        }
        for (t, (s, _)) in seq.iter().enumerate() {
            replaced.insert(s.id.clone(), [dims[0][t], dims[1][t]]);
        }
    }
    Ok(preds
        .iter()
        .map(|p| VaPrediction {
            key: p.key.clone(),
            va: replaced.get(&p.key).copied().unwrap_or(p.va),
        })
        .collect())
}

/// Utterance-level VA: each sequence contributes its per-dimension median
/// and an utterance averages its sequences. Samples without an utterance
/// id are ignored.
pub fn utterance_predictions(
    preds: &[VaPrediction],
    layout: &Dataset,
) -> Result<BTreeMap<String, [f64; 2]>, HarnessError> {
    let samples: Vec<&AnnotatedSample> = layout.samples.iter().filter(|s| s.utterance_id.is_some()).collect();
    let mut utterances: BTreeMap<String, Vec<[f64; 2]>> = BTreeMap::new();
    for seq in sequences(&index(preds), &samples) {
        let v: Vec<f64> = seq.iter().map(|(_, p)| p[0]).collect();
        let a: Vec<f64> = seq.iter().map(|(_, p)| p[1]).collect();
        let u = seq[0].0.utterance_id.clone().expect("filtered");
        utterances
            .entry(u)
            .or_default()
            .push([median(&v).expect("nonempty"), median(&a).expect("nonempty")]);
    }
    Ok(utterance_aggregate(&utterances)?)
}

/// Compound class index per prediction record.
pub fn zero_shot(defs: &[CompoundClassDef], records: &[PredictionRecord]) -> Result<Vec<usize>, HarnessError> {
    records.iter().map(|r| Ok(classify_compound(defs, r)?)).collect()
}

/// `id,class,name`.
pub fn zero_shot_csv(defs: &[CompoundClassDef], records: &[PredictionRecord], classes: &[usize]) -> String {
    let mut s = String::from("id,class,name\n");
    for (r, &c) in records.iter().zip(classes) {
        s.push_str(&format!("{},{c},{}\n", r.id, defs[c].name));
    }
    s
}

/// Fraction of records whose id carries a COMPOUND label equal to the
/// predicted class, over the labelled ones.
pub fn zero_shot_accuracy(records: &[PredictionRecord], classes: &[usize], truth: &Dataset) -> Option<f64> {
    let labels: HashMap<&str, usize> = truth
        .samples
        .iter()
        .filter_map(|s| match s.label {
            Label::Compound(c) => Some((s.id.as_str(), c)),
            _ => None,
        })
        .collect();
    let (hit, n) =
        records
            .iter()
            .zip(classes)
            .fold((0usize, 0usize), |(h, n), (r, &c)| match labels.get(r.id.as_str()) {
                Some(&t) => (h + usize::from(t == c), n + 1),
                None => (h, n),
            });
    (n > 0).then(|| hit as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect_types::{Split, ValenceArousal};
    use crate::harness::eval::predictions_csv;
    use crate::relatedness::RelatednessTable;
    use crate::zeroshot::default_compound_defs;

    fn record(id: &str, v: f64, a: f64) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            frame_index: None,
            valence: v,
            arousal: a,
            expr_probs: [1.0 / 7.0; 7],
            au_probs: [0.5; 17],
        }
    }

    #[test]
    fn va_files_round_trip() {
        let preds = vec![
            VaPrediction {
                key: "a".into(),
                va: [0.25, -0.5],
            },
            VaPrediction {
                key: "b".into(),
                va: [1.0 / 3.0, 0.0],
            },
        ];
        let back = parse_va(&va_csv(&preds).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].key, "b");
        assert_eq!(back[1].va, preds[1].va);
        assert!(parse_va("id,valence,arousal\na,x,0\n").is_err());
    }

    #[test]
    fn manifest_fusion_worked_example() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.csv"),
            predictions_csv(&[record("f0", 0.2, 0.0)]).unwrap(),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("b.csv"),
            predictions_csv(&[record("f0", 0.5, 0.0)]).unwrap(),
        )
        .unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "member_id,ccc_v,ccc_a,path\nA,0.4,1,a.csv\nB,0.6,1,b.csv\n").unwrap();
        let fused = fuse_manifest(&m).unwrap();
        assert!((fused[0].va[0] - 0.38).abs() < 1e-15);
        assert!(va_csv(&fused).unwrap().contains("f0,0.38"));
    }

    fn va_sample(id: usize, seq: &str, utt: &str, v: f64) -> AnnotatedSample {
        AnnotatedSample {
            id: format!("{seq}-{id}"),
            split: Split::Val,
            sequence_id: Some(seq.into()),
            utterance_id: Some(utt.into()),
            frame_index: Some(id),
            features: vec![0.0],
            audio_features: None,
            landmarks: None,
            label: Label::Va(ValenceArousal::new(v, v).unwrap()),
        }
    }

    #[test]
    fn postprocess_gate_prefers_filtering_noisy_series() {
        let mut samples = Vec::new();
        let mut preds = Vec::new();
        for s in 0..3 {
            let seq = format!("q{s}");
            for t in 0..40 {
                let truth = (t as f64 * 0.15 + s as f64).sin() * 0.8;
                let spike = if t % 5 == 2 { 0.9 } else { 0.0 };
                let smp = va_sample(t, &seq, "u", truth);
                preds.push(VaPrediction {
                    key: smp.id.clone(),
                    va: [truth + spike, truth],
                });
                samples.push(smp);
            }
        }
        let ds = Dataset::new(samples);
        let [(pv, sv), (pa, _)] = select_va_postprocess(&preds, &ds).unwrap();
        assert!(pv.median_window.is_some());
        assert!(sv > 0.9);
        // arousal is already exact, nothing can beat it
        assert_eq!(pa, PostProcess::default());
        let out = apply_va_postprocess(&preds, &ds, [pv, pa]).unwrap();
        assert_eq!(out.len(), preds.len());
        assert_eq!(out[7].va[1], preds[7].va[1]);
    }

    #[test]
    fn utterances_average_sequence_medians() {
        let samples = vec![
            va_sample(0, "a", "u1", 0.0),
            va_sample(1, "a", "u1", 0.0),
            va_sample(2, "a", "u1", 0.0),
            va_sample(0, "b", "u1", 0.0),
        ];
        let preds: Vec<VaPrediction> = samples
            .iter()
            .zip([0.1, 0.5, 0.2, 0.9])
            .map(|(s, v)| VaPrediction {
                key: s.id.clone(),
                va: [v, -v],
            })
            .collect();
        let u = utterance_predictions(&preds, &Dataset::new(samples)).unwrap();
        assert!((u["u1"][0] - 0.55).abs() < 1e-12);
        assert!((u["u1"][1] + 0.55).abs() < 1e-12);
    }

    #[test]
    fn zero_shot_labels_and_accuracy() {
        let defs = default_compound_defs(&RelatednessTable::cognitive());
        let mut happy_surprised = record("x", 0.8, 0.5);
        happy_surprised.expr_probs = [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.5];
        let classes = zero_shot(&defs, &[happy_surprised.clone()]).unwrap();
        assert_eq!(defs[classes[0]].name, "happily_surprised");
        let csv = zero_shot_csv(&defs, &[happy_surprised.clone()], &classes);
        assert!(csv.ends_with("happily_surprised\n"));
        let truth = Dataset::new(vec![AnnotatedSample {
            id: "x".into(),
            split: Split::Test,
            sequence_id: None,
            utterance_id: None,
            frame_index: None,
            features: vec![0.0],
            audio_features: None,
            landmarks: None,
            label: Label::Compound(classes[0]),
        }]);
        assert_eq!(zero_shot_accuracy(&[happy_surprised], &classes, &truth), Some(1.0));
    }
}
