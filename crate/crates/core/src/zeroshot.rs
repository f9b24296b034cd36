//! Zero-shot compound-expression scoring from basic-expression, AU and
//! valence predictions.

use thiserror::Error;

use crate::affect_types::{au_index, ExpressionLabel, PredictionRecord};
use crate::relatedness::RelatednessTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZeroShotError {
    #[error("invalid compound definition {name:?}: {reason}")]
    InvalidDef { name: String, reason: String },
    #[error("no usable prediction for AU{0}")]
    MissingAUPrediction(u32),
    #[error("no compound definitions")]
    EmptyDefs,
    #[error("definition line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundClassDef {
    pub name: String,
    pub emo1: ExpressionLabel,
    pub emo2: ExpressionLabel,
    /// `(AU id, p(AU | compound))`.
    pub au_set: Vec<(u32, f64)>,
    pub valence_bonus: bool,
}

impl CompoundClassDef {
    pub fn new(
        name: impl Into<String>,
        emo1: ExpressionLabel,
        emo2: ExpressionLabel,
        au_set: Vec<(u32, f64)>,
        valence_bonus: bool,
    ) -> Result<Self, ZeroShotError> {
        let name = name.into();
        let invalid = |reason: &str| ZeroShotError::InvalidDef {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if emo1 == emo2 {
            return Err(invalid("constituents must differ"));
        }
        if au_set.is_empty() {
            return Err(invalid("empty AU set"));
        }
        for (i, &(au, w)) in au_set.iter().enumerate() {
            if au_index(au).is_err() {
                return Err(invalid(&format!("unknown AU{au}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(invalid(&format!("weight {w} for AU{au} outside (0, 1]")));
            }
            if au_set[..i].iter().any(|&(a, _)| a == au) {
                return Err(invalid(&format!("AU{au} listed twice")));
            }
        }
        Ok(Self {
            name,
            emo1,
            emo2,
            au_set,
            valence_bonus,
        })
    }

    /// Union of both constituents' AU rows; an AU in both keeps the larger weight.
    pub fn from_table(
        name: impl Into<String>,
        emo1: ExpressionLabel,
        emo2: ExpressionLabel,
        valence_bonus: bool,
        table: &RelatednessTable,
    ) -> Result<Self, ZeroShotError> {
        let mut au_set: Vec<(u32, f64)> = Vec::new();
        for e in [emo1, emo2] {
            for (au, w) in table.row(e).into_iter().flat_map(|r| r.weighted_aus()) {
                match au_set.iter_mut().find(|(a, _)| *a == au) {
                    Some(entry) => entry.1 = entry.1.max(w),
                    None => au_set.push((au, w)),
                }
            }
        }
        Self::new(name, emo1, emo2, au_set, valence_bonus)
    }
}

/// `0.5·(sign(v) + 1)`, with `sign(0) = 0`.
pub fn valence_bonus(valence: f64) -> f64 {
    let sign = if valence > 0.0 {
        1.0
    } else if valence < 0.0 {
        -1.0
    } else {
        0.0
    };
    0.5 * (sign + 1.0)
}

/// Weighted mean AU probability over the class's AU set, plus both
/// constituents' expression probabilities, plus the valence bonus where
/// the class carries one.
pub fn candidate_score(def: &CompoundClassDef, pred: &PredictionRecord) -> Result<f64, ZeroShotError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(au, w) in &def.au_set {
        let p = pred
            .au_prob(au)
            .filter(|p| p.is_finite())
            .ok_or(ZeroShotError::MissingAUPrediction(au))?;
        num += w * p;
        den += w;
    }
    let mut score = num / den + pred.expr_probs[def.emo1.index()] + pred.expr_probs[def.emo2.index()];
    if def.valence_bonus {
        score += valence_bonus(pred.valence);
    }
    Ok(score)
}

/// Index of the highest-scoring definition; ties go to the earlier one.
pub fn classify_compound(defs: &[CompoundClassDef], pred: &PredictionRecord) -> Result<usize, ZeroShotError> {
    if defs.is_empty() {
        return Err(ZeroShotError::EmptyDefs);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, d) in defs.iter().enumerate() {
        let s = candidate_score(d, pred)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

const DEFAULT_PAIRS: [(&str, ExpressionLabel, ExpressionLabel); 11] = [
    (
        "happily_surprised",
        ExpressionLabel::HAPPINESS,
        ExpressionLabel::SURPRISE,
    ),
    (
        "happily_disgusted",
        ExpressionLabel::HAPPINESS,
        ExpressionLabel::DISGUST,
    ),
    ("sadly_fearful", ExpressionLabel::SADNESS, ExpressionLabel::FEAR),
    ("sadly_angry", ExpressionLabel::SADNESS, ExpressionLabel::ANGER),
    ("sadly_surprised", ExpressionLabel::SADNESS, ExpressionLabel::SURPRISE),
    ("sadly_disgusted", ExpressionLabel::SADNESS, ExpressionLabel::DISGUST),
    ("fearfully_angry", ExpressionLabel::FEAR, ExpressionLabel::ANGER),
    ("fearfully_surprised", ExpressionLabel::FEAR, ExpressionLabel::SURPRISE),
    ("angrily_surprised", ExpressionLabel::ANGER, ExpressionLabel::SURPRISE),
    ("angrily_disgusted", ExpressionLabel::ANGER, ExpressionLabel::DISGUST),
    (
        "disgustedly_surprised",
        ExpressionLabel::DISGUST,
        ExpressionLabel::SURPRISE,
    ),
];

/// The eleven standard compound classes; only the two happy blends carry
/// the valence bonus.
pub fn default_compound_defs(table: &RelatednessTable) -> Vec<CompoundClassDef> {
    DEFAULT_PAIRS
        .iter()
        .map(|&(name, e1, e2)| {
            let bonus = e1 == ExpressionLabel::HAPPINESS;
            CompoundClassDef::from_table(name, e1, e2, bonus, table).expect("table rows are nonempty")
        })
        .collect()
}

/// Parse `name, emo1, emo2, bonus_flag[, au:w, ...]` lines. Without an AU
/// list the set comes from `table`. Blank lines, `#` comments and a
/// `name,...` header are skipped.
pub fn parse_defs(text: &str, table: &RelatednessTable) -> Result<Vec<CompoundClassDef>, ZeroShotError> {
    let mut defs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("name,") {
            continue;
        }
        let err = |message: String| ZeroShotError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(err("expected at least 4 fields".into()));
        }
        let emo = |s: &str| ExpressionLabel::from_name(s).map_err(|e| err(e.to_string()));
        let (e1, e2) = (emo(fields[1])?, emo(fields[2])?);
        let bonus = match fields[3] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(format!("bad bonus flag {other:?}"))),
        };
        let def = if fields.len() == 4 {
            CompoundClassDef::from_table(fields[0], e1, e2, bonus, table)?
        } else {
            let mut aus = Vec::new();
            for item in &fields[4..] {
                let (au, w) = item
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad AU item {item:?}")))?;
                let au = au
                    .trim()
                    .trim_start_matches("AU")
                    .parse()
                    .map_err(|_| err(format!("bad AU {au:?}")))?;
                let w = w.trim().parse().map_err(|_| err(format!("bad weight {w:?}")))?;
                aus.push((au, w));
            }
            CompoundClassDef::new(fields[0], e1, e2, aus, bonus)?
        };
        defs.push(def);
    }
    Ok(defs)
}

pub fn defs_to_text(defs: &[CompoundClassDef]) -> String {
    let mut out = String::from("name,emo1,emo2,bonus,aus\n");
    for d in defs {
        out.push_str(&format!(
            "{},{},{},{}",
            d.name,
            d.emo1.name(),
            d.emo2.name(),
            u8::from(d.valence_bonus)
        ));
        for (au, w) in &d.au_set {
            out.push_str(&format!(",{au}:{w}"));
        }
        out.push('\n');
    }
    out
}
