//! Emotion ↔ action-unit relatedness tables and the coupling rules built on
//! them: hard co-annotation in both directions, soft co-annotation of AU
//! samples with an emotion distribution, and the emotion→AU mixture used
//! by distribution matching.
//!
//! Neutral has no row. It maps to the empty AU set, scores 0 in soft
//! co-annotation and contributes nothing to mixtures.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::affect_types::{au_index, AUVector, ExpressionLabel, NUM_AUS, NUM_EXPRESSIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelatednessError {
    #[error("AU{au} required by {emotion} is not annotated")]
    MissingMask { emotion: &'static str, au: u32 },
    #[error("expression probabilities must be a distribution (sum {sum}, min {min})")]
    BadDistribution { sum: f64, min: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid table: {0}")]
    Invalid(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// AUs associated with one basic emotion.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionRow {
    pub emotion: ExpressionLabel,
    /// Activated by every annotator (weight 1).
    pub prototypical: Vec<u32>,
    /// Activated by a fraction `w` of annotators.
    pub observational: Vec<(u32, f64)>,
}

impl EmotionRow {
    /// Every AU of the row with its weight; prototypical first.
    pub fn weighted_aus(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.prototypical
            .iter()
            .map(|&au| (au, 1.0))
            .chain(self.observational.iter().copied())
    }

    pub fn required_count(&self) -> usize {
        self.prototypical.len() + self.observational.len()
    }

    fn weight(&self, w: f64, reweight: bool) -> f64 {
        if reweight {
            w
        } else {
            1.0
        }
    }
}

/// An AU target produced by co-annotating an expression sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuTarget {
    pub au_id: u32,
    pub target: bool,
    pub weight: f64,
}

/// A probability distribution over the seven expression classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftExpressionLabel {
    pub probabilities: [f64; NUM_EXPRESSIONS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelatednessTable {
    pub name: String,
    rows: Vec<EmotionRow>,
}

impl RelatednessTable {
    pub fn new(name: impl Into<String>, rows: Vec<EmotionRow>) -> Result<Self, RelatednessError> {
        let table = Self {
            name: name.into(),
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    /// Prototypical/observational AUs from the cognitive-psychological study.
    pub fn cognitive() -> Self {
        use ExpressionLabel as E;
        let row = |emotion, prototypical: &[u32], observational: &[(u32, f64)]| EmotionRow {
            emotion,
            prototypical: prototypical.to_vec(),
            observational: observational.to_vec(),
        };
        Self {
            name: "cognitive".into(),
            rows: vec![
                row(E::HAPPINESS, &[12, 25], &[(6, 0.51)]),
                row(E::SADNESS, &[4, 15], &[(1, 0.6), (6, 0.5), (11, 0.26), (17, 0.67)]),
                row(E::FEAR, &[1, 4, 20, 25], &[(2, 0.57), (5, 0.63), (26, 0.33)]),
                row(E::ANGER, &[4, 7, 24], &[(10, 0.26), (17, 0.52), (23, 0.29)]),
                row(E::SURPRISE, &[1, 2, 25, 26], &[(5, 0.66)]),
                row(E::DISGUST, &[9, 10, 17], &[(4, 0.31), (24, 0.26)]),
            ],
        }
    }

    /// AU activation rates observed per expression in an in-the-wild corpus.
    /// All AUs are weighted; there is no prototypical split.
    pub fn empirical() -> Self {
        use ExpressionLabel as E;
        let row = |emotion, observational: &[(u32, f64)]| EmotionRow {
            emotion,
            prototypical: Vec::new(),
            observational: observational.to_vec(),
        };
        Self {
            name: "empirical".into(),
            rows: vec![
                row(E::HAPPINESS, &[(12, 0.82), (25, 0.7), (6, 0.57), (7, 0.83), (10, 0.63)]),
                // The source row lost its first AU id; AU4 is assumed.
                row(E::SADNESS, &[(4, 0.53), (15, 0.42), (1, 0.31), (7, 0.13), (17, 0.1)]),
                row(
                    E::FEAR,
                    &[(1, 0.52), (4, 0.4), (25, 0.85), (5, 0.38), (7, 0.57), (10, 0.57)],
                ),
                row(E::ANGER, &[(4, 0.65), (7, 0.45), (25, 0.4), (10, 0.33), (9, 0.15)]),
                row(
                    E::SURPRISE,
                    &[(1, 0.38), (2, 0.37), (25, 0.85), (26, 0.3), (5, 0.5), (7, 0.2)],
                ),
                row(
                    E::DISGUST,
                    &[(9, 0.21), (10, 0.85), (17, 0.23), (4, 0.6), (7, 0.75), (25, 0.8)],
                ),
            ],
        }
    }

    pub fn rows(&self) -> &[EmotionRow] {
        &self.rows
    }

    pub fn row(&self, emotion: ExpressionLabel) -> Option<&EmotionRow> {
        self.rows.iter().find(|r| r.emotion == emotion)
    }

    fn validate(&self) -> Result<(), RelatednessError> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if row.emotion.is_neutral() {
                return Err(RelatednessError::Invalid("neutral cannot have a row".into()));
            }
            if seen.contains(&row.emotion) {
                return Err(RelatednessError::Invalid(format!("duplicate row for {}", row.emotion)));
            }
            seen.push(row.emotion);
            let mut aus = Vec::new();
            for (au, w) in row.weighted_aus() {
                au_index(au).map_err(|e| RelatednessError::Invalid(e.to_string()))?;
                if !(w > 0.0 && w <= 1.0) {
                    return Err(RelatednessError::Invalid(format!(
                        "{}: weight {w} for AU{au} outside (0, 1]",
                        row.emotion
                    )));
                }
                if aus.contains(&au) {
                    return Err(RelatednessError::Invalid(format!(
                        "{}: AU{au} listed twice",
                        row.emotion
                    )));
                }
                aus.push(au);
            }
        }
        Ok(())
    }

    /// `p(AU_i | emotion)` as a 7×17 matrix. Rows for neutral and for
    /// emotions absent from the table are zero.
    pub fn au_given_emotion(&self, reweight: bool) -> [[f64; NUM_AUS]; NUM_EXPRESSIONS] {
        let mut m = [[0.0; NUM_AUS]; NUM_EXPRESSIONS];
        for row in &self.rows {
            let e = row.emotion.index();
            for &au in &row.prototypical {
                m[e][au_index(au).expect("validated")] = 1.0;
            }
            for &(au, w) in &row.observational {
                m[e][au_index(au).expect("validated")] = row.weight(w, reweight);
            }
        }
        m
    }

    /// Parse the line format `<emotion> proto=<id,...> obs=<id:w,...>`.
    /// `#` starts a comment; blank lines are ignored; either key may be
    /// omitted or left empty.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, RelatednessError> {
        let mut rows = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RelatednessError::Parse {
                line: lineno + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let emotion_name = parts.next().expect("non-empty line");
            let emotion = ExpressionLabel::from_name(emotion_name).map_err(|e| err(e.to_string()))?;
            let mut prototypical = Vec::new();
            let mut observational = Vec::new();
            for part in parts {
                if let Some(list) = part.strip_prefix("proto=") {
                    for item in list.split(',').filter(|s| !s.is_empty()) {
                        let au = item.parse::<u32>().map_err(|_| err(format!("bad AU id {item:?}")))?;
                        prototypical.push(au);
                    }
                } else if let Some(list) = part.strip_prefix("obs=") {
                    for item in list.split(',').filter(|s| !s.is_empty()) {
                        let (au, w) = item
                            .split_once(':')
                            .ok_or_else(|| err(format!("expected id:weight, got {item:?}")))?;
                        let au = au.parse::<u32>().map_err(|_| err(format!("bad AU id {au:?}")))?;
                        let w = w.parse::<f64>().map_err(|_| err(format!("bad weight {w:?}")))?;
                        observational.push((au, w));
                    }
                } else {
                    return Err(err(format!("unexpected field {part:?}")));
                }
            }
            rows.push(EmotionRow {
                emotion,
                prototypical,
                observational,
            });
        }
        Self::new(name, rows)
    }

    pub fn load(path: &Path) -> Result<Self, RelatednessError> {
        let text = std::fs::read_to_string(path).map_err(|e| RelatednessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "file".into());
        Self::parse(name, &text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# relatedness table: {}\n", self.name);
        for row in &self.rows {
            let proto: Vec<String> = row.prototypical.iter().map(u32::to_string).collect();
            let obs: Vec<String> = row.observational.iter().map(|(au, w)| format!("{au}:{w}")).collect();
            let _ = writeln!(out, "{} proto={} obs={}", row.emotion, proto.join(","), obs.join(","));
        }
        out
    }
}

/// AU targets implied by an expression label: prototypical AUs with weight
/// 1 and observational AUs with their table weight. Neutral yields nothing.
pub fn coannotate_emotion_to_aus(label: ExpressionLabel, table: &RelatednessTable) -> Vec<AuTarget> {
    table
        .row(label)
        .map(|row| {
            row.weighted_aus()
                .map(|(au_id, weight)| AuTarget {
                    au_id,
                    target: true,
                    weight,
                })
                .collect()
        })
        .unwrap_or_default()
}

/// The emotion whose entire AU set is active. Among several qualifying
/// emotions the one with the most required AUs wins, then canonical order.
/// Emotions with an unannotated required AU are not eligible.
pub fn coannotate_aus_to_emotion(aus: &AUVector, table: &RelatednessTable) -> Option<ExpressionLabel> {
    let mut best: Option<&EmotionRow> = None;
    for row in table.rows() {
        if row.required_count() == 0 {
            continue;
        }
        let satisfied = row
            .weighted_aus()
            .all(|(au, _)| aus.is_annotated(au) && aus.is_active(au));
        if !satisfied {
            continue;
        }
        best = match best {
            Some(b)
                if b.required_count() > row.required_count()
                    || (b.required_count() == row.required_count() && b.emotion < row.emotion) =>
            {
                Some(b)
            }
            _ => Some(row),
        };
    }
    best.map(|r| r.emotion)
}

/// Per-emotion AU agreement score `Σ w·y / Σ w` (neutral scores 0).
pub fn coannotation_scores(
    aus: &AUVector,
    table: &RelatednessTable,
    reweight: bool,
) -> Result<[f64; NUM_EXPRESSIONS], RelatednessError> {
    let mut scores = [0.0; NUM_EXPRESSIONS];
    for row in table.rows() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (au, w) in row.weighted_aus() {
            if !aus.is_annotated(au) {
                return Err(RelatednessError::MissingMask {
                    emotion: row.emotion.name(),
                    au,
                });
            }
            let w = row.weight(w, reweight);
            if aus.is_active(au) {
                num += w;
            }
            den += w;
        }
        if den > 0.0 {
            scores[row.emotion.index()] = num / den;
        }
    }
    Ok(scores)
}

/// Soft emotion label for an AU-annotated sample: softmax over the
/// per-emotion agreement scores.
pub fn soft_coannotate(
    aus: &AUVector,
    table: &RelatednessTable,
    reweight: bool,
) -> Result<SoftExpressionLabel, RelatednessError> {
    let scores = coannotation_scores(aus, table, reweight)?;
    Ok(SoftExpressionLabel {
        probabilities: softmax7(&scores),
    })
}

fn softmax7(scores: &[f64; NUM_EXPRESSIONS]) -> [f64; NUM_EXPRESSIONS] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_EXPRESSIONS];
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

/// Check that `p` is a distribution within `tol`.
pub fn check_distribution(p: &[f64], tol: f64) -> Result<(), RelatednessError> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    if !sum.is_finite() || (sum - 1.0).abs() > tol || min < 0.0 {
        return Err(RelatednessError::BadDistribution { sum, min });
    }
    Ok(())
}

/// `q(AU_i) = Σ_emo p(emo) · p(AU_i | emo)`.
pub fn emotion_au_mixture(
    expr_probs: &[f64; NUM_EXPRESSIONS],
    table: &RelatednessTable,
    reweight: bool,
) -> Result<[f64; NUM_AUS], RelatednessError> {
    check_distribution(expr_probs, 1e-6)?;
    let cond = table.au_given_emotion(reweight);
    let mut q = [0.0; NUM_AUS];
    for (e, p) in expr_probs.iter().enumerate() {
        for (qi, c) in q.iter_mut().zip(&cond[e]) {
            *qi += p * c;
        }
    }
    Ok(q)
}
