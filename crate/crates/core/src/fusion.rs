//! Ensemble combination and temporal post-processing of VA predictions.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::metrics::{ccc, SeriesPair};
use crate::models::{median, Body, FusionMode, ModelError, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("no ensemble members")]
    NoMembers,
    #[error("fusion weights sum to zero for {0}")]
    ZeroWeightSum(&'static str),
    #[error("negative fusion weight {weight} for member {member}")]
    NegativeWeight { member: String, weight: f64 },
    #[error("member {member} does not cover the same frames as the first member")]
    KeyMisalignment { member: String },
    #[error("median window must be odd and positive, got {0}")]
    EvenWindow(usize),
    #[error("smoothing factor must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("utterance {0:?} has no sequences")]
    EmptyUtterance(String),
    #[error("series lengths differ")]
    LengthMismatch,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One frame's valence/arousal prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct VaPrediction {
    pub key: String,
    pub va: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub member_id: String,
    /// Validation CCC for valence and arousal; these are the fusion weights.
    pub val_ccc: [f64; 2],
    pub predictions: Vec<VaPrediction>,
}

/// Weighted average of member predictions, each dimension weighted by the
/// members' validation CCC on that dimension.
pub fn decision_level_fuse(members: &[EnsembleMember]) -> Result<Vec<VaPrediction>, FusionError> {
    let first = members.first().ok_or(FusionError::NoMembers)?;
    for m in members {
        for &w in &m.val_ccc {
            if w < 0.0 || !w.is_finite() {
                return Err(FusionError::NegativeWeight {
                    member: m.member_id.clone(),
                    weight: w,
                });
            }
        }
        let aligned = m.predictions.len() == first.predictions.len()
            && m.predictions
                .iter()
                .zip(&first.predictions)
                .all(|(a, b)| a.key == b.key);
        if !aligned {
            return Err(FusionError::KeyMisalignment {
                member: m.member_id.clone(),
            });
        }
    }
    let mut totals = [0.0; 2];
    for m in members {
        totals[0] += m.val_ccc[0];
        totals[1] += m.val_ccc[1];
    }
    for (d, name) in [(0, "valence"), (1, "arousal")] {
        if totals[d] == 0.0 {
            return Err(FusionError::ZeroWeightSum(name));
        }
    }
    if members.len() == 1 {
        return Ok(first.predictions.clone());
    }
    Ok((0..first.predictions.len())
        .map(|i| {
            let mut va = [0.0; 2];
            for d in 0..2 {
                let s: f64 = members.iter().map(|m| m.val_ccc[d] * m.predictions[i].va[d]).sum();
                va[d] = s / totals[d];
            }
            VaPrediction {
                key: first.predictions[i].key.clone(),
                va,
            }
        })
        .collect())
}

/// Composite spec whose member trunks feed one fusion trunk. All members
/// must be single-trunk specs with the same heads.
pub fn model_level_fuse_spec(members: &[ModelSpec], mode: FusionMode, width: usize) -> Result<ModelSpec, FusionError> {
    let first = members
        .first()
        .ok_or_else(|| ModelError::InvalidSpec("fusion needs at least one member".into()))?;
    let mut trunks = Vec::with_capacity(members.len());
    for m in members {
        m.validate()?;
        if m.heads != first.heads {
            return Err(ModelError::InvalidSpec("fusion members must share their heads".into()).into());
        }
        match &m.body {
            Body::Trunk(t) => trunks.push(t.clone()),
            Body::Fused { .. } => {
                return Err(ModelError::InvalidSpec("fusion members must be single trunks".into()).into())
            }
        }
    }
    let spec = ModelSpec {
        body: Body::Fused {
            members: trunks,
            mode,
            width,
        },
        heads: first.heads.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Sliding median with edge replication.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>, FusionError> {
    if window.is_multiple_of(2) {
        return Err(FusionError::EvenWindow(window));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let half = window / 2;
    let last = series.len() - 1;
    let mut buf = Vec::with_capacity(window);
    Ok((0..series.len())
        .map(|i| {
            buf.clear();
            buf.extend((0..window).map(|k| series[(i + k).saturating_sub(half).min(last)]));
            median(&buf).expect("nonempty window")
        })
        .collect())
}

/// Causal exponential smoothing `y_t = α·x_t + (1 − α)·y_{t−1}`, `y_0 = x_0`.
pub fn smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>, FusionError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FusionError::BadAlpha(alpha));
    }
    let mut out = Vec::with_capacity(series.len());
    for (i, &x) in series.iter().enumerate() {
        out.push(if i == 0 {
            x
        } else {
            alpha * x + (1.0 - alpha) * out[i - 1]
        });
    }
    Ok(out)
}

/// Mean of the sequence medians of each utterance.
pub fn utterance_aggregate(
    utterances: &BTreeMap<String, Vec<[f64; 2]>>,
) -> Result<BTreeMap<String, [f64; 2]>, FusionError> {
    utterances
        .iter()
        .map(|(u, medians)| {
            if medians.is_empty() {
                return Err(FusionError::EmptyUtterance(u.clone()));
            }
            let n = medians.len() as f64;
            let mut mean = [0.0; 2];
            for m in medians {
                mean[0] += m[0];
                mean[1] += m[1];
            }
            Ok((u.clone(), [mean[0] / n, mean[1] / n]))
        })
        .collect()
}

/// Post-processing applied to each sequence's series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PostProcess {
    pub median_window: Option<usize>,
    pub smoothing: Option<f64>,
}

pub const MEDIAN_WINDOWS: [usize; 3] = [3, 5, 9];
pub const SMOOTHING_ALPHAS: [f64; 3] = [0.3, 0.5, 0.7];

impl PostProcess {
    pub fn apply(&self, series: &[f64]) -> Result<Vec<f64>, FusionError> {
        let mut out = series.to_vec();
        if let Some(w) = self.median_window {
            out = median_filter(&out, w)?;
        }
        if let Some(a) = self.smoothing {
            out = smooth(&out, a)?;
        }
        Ok(out)
    }
}

fn pooled_ccc(sequences: &[(Vec<f64>, Vec<f64>)], post: &PostProcess) -> Result<f64, FusionError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (p, t) in sequences {
        if p.len() != t.len() {
            return Err(FusionError::LengthMismatch);
        }
        pred.extend(post.apply(p)?);
        truth.extend_from_slice(t);
    }
    let pair = SeriesPair::new(&pred, &truth).map_err(|_| FusionError::LengthMismatch)?;
    Ok(ccc(pair).map(|s| s.value).unwrap_or(f64::NEG_INFINITY))
}

/// Choose post-processing on validation sequences `(prediction, truth)`:
/// the best median window is kept only if it beats no filtering, then the
/// best smoothing factor only if it beats what was kept so far.
pub fn select_postprocess(sequences: &[(Vec<f64>, Vec<f64>)]) -> Result<(PostProcess, f64), FusionError> {
    let mut best = PostProcess::default();
    let mut best_score = pooled_ccc(sequences, &best)?;
    let base = best;
    for w in MEDIAN_WINDOWS {
        let cand = PostProcess {
            median_window: Some(w),
            ..base
        };
        let s = pooled_ccc(sequences, &cand)?;
        if s > best_score {
            best = cand;
            best_score = s;
        }
    }
    let base = best;
    for a in SMOOTHING_ALPHAS {
        let cand = PostProcess {
            smoothing: Some(a),
            ..base
        };
        let s = pooled_ccc(sequences, &cand)?;
        if s > best_score {
            best = cand;
            best_score = s;
        }
    }
    Ok((best, best_score))
}

/// One line of a member manifest: `member_id, ccc_v, ccc_a, path`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub member_id: String,
    pub val_ccc: [f64; 2],
    pub path: String,
}

/// Blank lines, `#` comments and a `member_id,...` header line are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, FusionError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("member_id") {
            continue;
        }
        let err = |message: &str| FusionError::Manifest {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad CCC value"));
        out.push(ManifestEntry {
            member_id: fields[0].to_string(),
            val_ccc: [num(fields[1])?, num(fields[2])?],
            path: fields[3].to_string(),
        });
    }
    Ok(out)
}
