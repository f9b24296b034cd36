//! On-disk dataset layout.
//!
//! A dataset directory holds `annotations.csv`
//! (`id,split,sequence_id,utterance_id,frame_index,task,payload`),
//! `features.csv` (`id,f0,f1,…`) and optionally `audio.csv` and
//! `landmarks.csv` in the same `id,…` form. Payloads are `v;a` for VA, a
//! class digit for EXPR, a 17-character `{0,1,-}` string for AU and a class
//! index for COMPOUND. Numbers are written in shortest round-trip form so
//! a parse/serialize cycle is bit-exact.

use std::collections::HashMap;
use std::path::Path;

use super::HarnessError;
use crate::affect_types::{
    validate_sample, AUVector, AnnotatedSample, ExpressionLabel, Label, Split, Task, ValenceArousal,
};
use crate::models::{FrameInput, ModelDims};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const AUDIO_FILE: &str = "audio.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";

const ANNOTATION_HEADER: [&str; 7] = [
    "id",
    "split",
    "sequence_id",
    "utterance_id",
    "frame_index",
    "task",
    "payload",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<AnnotatedSample>,
}

pub fn label_payload(label: &Label) -> String {
    match label {
        Label::Va(va) => format!("{};{}", va.valence, va.arousal),
        Label::Expr(e) => e.index().to_string(),
        Label::Au(a) => a.to_payload(),
        Label::Compound(c) => c.to_string(),
    }
}

pub fn parse_payload(task: Task, payload: &str) -> Option<Label> {
    Some(match task {
        Task::Va => {
            let (v, a) = payload.split_once(';')?;
            Label::Va(ValenceArousal::new(v.trim().parse().ok()?, a.trim().parse().ok()?).ok()?)
        }
        Task::Expr => Label::Expr(ExpressionLabel::new(payload.trim().parse().ok()?).ok()?),
        Task::Au => Label::Au(AUVector::from_payload(payload.trim())?),
        Task::Compound => Label::Compound(payload.trim().parse().ok()?),
    })
}

fn data_err(file: &str, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Data {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn write_vectors(rows: &[(&str, &[f64])], prefix: &str) -> Result<String, HarnessError> {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for (id, v) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(v.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, HarnessError> {
    let bytes = w.into_inner().map_err(|e| HarnessError::Data {
        file: String::new(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn read_vectors(file: &str, text: &str) -> Result<HashMap<String, Vec<f64>>, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let width = r.headers()?.len().saturating_sub(1);
    let mut out = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != width + 1 {
            return Err(data_err(
                file,
                line,
                format!("expected {} fields, got {}", width + 1, rec.len()),
            ));
        }
        let v = rec
            .iter()
            .skip(1)
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| data_err(file, line, format!("bad number {x:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if out.insert(rec[0].to_string(), v).is_some() {
            return Err(data_err(file, line, format!("duplicate id {:?}", &rec[0])));
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn new(samples: Vec<AnnotatedSample>) -> Self {
        Self { samples }
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn dims(&self) -> ModelDims {
        let first = self.samples.first();
        ModelDims {
            feature_dim: self.feature_dim(),
            audio_dim: first.and_then(|s| s.audio_features.as_ref()).map_or(0, Vec::len),
            landmark_dim: first.and_then(|s| s.landmarks.as_ref()).map_or(0, Vec::len),
        }
    }

    pub fn split(&self, split: Split) -> Vec<&AnnotatedSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn annotations_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(ANNOTATION_HEADER)?;
        for s in &self.samples {
            w.write_record([
                s.id.as_str(),
                s.split.as_str(),
                s.sequence_id.as_deref().unwrap_or(""),
                s.utterance_id.as_deref().unwrap_or(""),
                &s.frame_index.map(|f| f.to_string()).unwrap_or_default(),
                s.label.task().as_str(),
                &label_payload(&s.label),
            ])?;
        }
        into_string(w)
    }

    pub fn features_csv(&self) -> Result<String, HarnessError> {
        let rows: Vec<(&str, &[f64])> = self
            .samples
            .iter()
            .map(|s| (s.id.as_str(), s.features.as_slice()))
            .collect();
        write_vectors(&rows, "f")
    }

    fn optional_csv(
        &self,
        pick: impl Fn(&AnnotatedSample) -> Option<&Vec<f64>>,
        prefix: &str,
    ) -> Result<Option<String>, HarnessError> {
        if !self.samples.iter().any(|s| pick(s).is_some()) {
            return Ok(None);
        }
        let rows: Vec<(&str, &[f64])> = self
            .samples
            .iter()
            .filter_map(|s| pick(s).map(|v| (s.id.as_str(), v.as_slice())))
            .collect();
        write_vectors(&rows, prefix).map(Some)
    }

    /// Build from file contents. Every sample must have a feature row.
    pub fn parse(
        annotations: &str,
        features: &str,
        audio: Option<&str>,
        landmarks: Option<&str>,
    ) -> Result<Self, HarnessError> {
        let mut feats = read_vectors(FEATURES_FILE, features)?;
        let mut audio = audio.map(|t| read_vectors(AUDIO_FILE, t)).transpose()?;
        let mut landmarks = landmarks.map(|t| read_vectors(LANDMARKS_FILE, t)).transpose()?;
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(annotations.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ANNOTATION_HEADER {
            return Err(data_err(
                ANNOTATIONS_FILE,
                1,
                format!("header must be {}", ANNOTATION_HEADER.join(",")),
            ));
        }
        let mut samples = Vec::new();
        let mut dim = None;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let err = |m: String| data_err(ANNOTATIONS_FILE, line, m);
            if rec.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", rec.len())));
            }
            let id = rec[0].to_string();
            let split = Split::parse(&rec[1]).ok_or_else(|| err(format!("bad split {:?}", &rec[1])))?;
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
            let frame_index = match &rec[4] {
                "" => None,
                f => Some(f.parse().map_err(|_| err(format!("bad frame index {f:?}")))?),
            };
            let task = Task::parse(&rec[5]).ok_or_else(|| err(format!("bad task {:?}", &rec[5])))?;
            let label = parse_payload(task, &rec[6])
                .ok_or_else(|| err(format!("bad {} payload {:?}", task.as_str(), &rec[6])))?;
            let features = feats
                .remove(&id)
                .ok_or_else(|| err(format!("no feature row for {id:?}")))?;
            let sample = AnnotatedSample {
                split,
                sequence_id: opt(&rec[2]),
                utterance_id: opt(&rec[3]),
                frame_index,
                features,
                audio_features: audio.as_mut().and_then(|a| a.remove(&id)),
                landmarks: landmarks.as_mut().and_then(|l| l.remove(&id)),
                label,
                id,
            };
            let d = *dim.get_or_insert(sample.features.len());
            validate_sample(&sample, d).map_err(|e| err(e.to_string()))?;
            samples.push(sample);
        }
        let ds = Self { samples };
        let dims = ds.dims();
        for s in &ds.samples {
            let bad = |what: &str| {
                data_err(
                    ANNOTATIONS_FILE,
                    0,
                    format!("{what} missing or misshapen for {:?}", s.id),
                )
            };
            if dims.audio_dim > 0 && s.audio_features.as_ref().map(Vec::len) != Some(dims.audio_dim) {
                return Err(bad("audio"));
            }
            if dims.landmark_dim > 0 && s.landmarks.as_ref().map(Vec::len) != Some(dims.landmark_dim) {
                return Err(bad("landmarks"));
            }
        }
        Ok(ds)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
        };
        put(ANNOTATIONS_FILE, self.annotations_csv()?)?;
        put(FEATURES_FILE, self.features_csv()?)?;
        if let Some(t) = self.optional_csv(|s| s.audio_features.as_ref(), "a")? {
            put(AUDIO_FILE, t)?;
        }
        if let Some(t) = self.optional_csv(|s| s.landmarks.as_ref(), "l")? {
            put(LANDMARKS_FILE, t)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, HarnessError> {
        let get = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))
        };
        let opt = |name: &str| dir.join(name).exists().then(|| get(name)).transpose();
        let audio = opt(AUDIO_FILE)?;
        let landmarks = opt(LANDMARKS_FILE)?;
        Self::parse(
            &get(ANNOTATIONS_FILE)?,
            &get(FEATURES_FILE)?,
            audio.as_deref(),
            landmarks.as_deref(),
        )
    }
}

pub fn frame_input(s: &AnnotatedSample) -> FrameInput {
    FrameInput {
        features: s.features.clone(),
        audio: s.audio_features.clone(),
        landmarks: s.landmarks.clone(),
    }
}

/// Samples grouped into sequences: frames sharing a `sequence_id` ordered
/// by frame index, everything else a sequence of its own. Groups appear in
/// order of first occurrence and hold indices into `samples`.
pub fn group_sequences(samples: &[&AnnotatedSample]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_seq: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        match s.sequence_id.as_deref() {
            Some(seq) => match by_seq.get(seq) {
                Some(&g) => groups[g].push(i),
                None => {
                    by_seq.insert(seq, groups.len());
                    groups.push(vec![i]);
                }
            },
            None => groups.push(vec![i]),
        }
    }
    for g in &mut groups {
        g.sort_by(|&a, &b| {
            let (a, b) = (samples[a], samples[b]);
            a.frame_index.cmp(&b.frame_index).then_with(|| a.id.cmp(&b.id))
        });
    }
    groups
}
