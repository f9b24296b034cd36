//! Label spaces shared by every other module: valence/arousal, the seven
//! basic expressions, the 17 aggregated action units and compound classes.
//!
//! Expression indices follow a fixed order: neutral first, then the six
//! basic emotions alphabetically. Every softmax head and every file format
//! in this crate uses that order.

use std::fmt;

use thiserror::Error;

/// Number of expression classes (neutral + six basic emotions).
pub const NUM_EXPRESSIONS: usize = 7;

/// Number of action units in the aggregated AU space.
pub const NUM_AUS: usize = 17;

/// Canonical AU ordering. Position in this array is the AU's vector index.
pub const AU_IDS: [u8; NUM_AUS] = [1, 2, 4, 5, 6, 7, 9, 10, 11, 12, 15, 17, 20, 23, 24, 25, 26];

const EXPRESSION_NAMES: [&str; NUM_EXPRESSIONS] = [
    "neutral",
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("unknown expression class {0}")]
    UnknownClass(usize),
    #[error("unknown expression name {0:?}")]
    UnknownName(String),
    #[error("AU{0} is not part of the 17-AU aggregate")]
    UnknownAU(u32),
    #[error("feature dimension {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what} = {value} is outside [-1, 1]")]
    ValueOutOfRange { what: &'static str, value: f64 },
    #[error("AU{au} is set but not annotated")]
    BadMask { au: u8 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("compound constituents must be distinct non-neutral emotions")]
    BadCompound,
}

/// A point in the valence/arousal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValenceArousal {
    pub valence: f64,
    pub arousal: f64,
}

impl ValenceArousal {
    pub fn new(valence: f64, arousal: f64) -> Result<Self, LabelError> {
        let va = Self { valence, arousal };
        va.validate()?;
        Ok(va)
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        for (what, value) in [("valence", self.valence), ("arousal", self.arousal)] {
            if !value.is_finite() {
                return Err(LabelError::NonFinite(what));
            }
            if !(-1.0..=1.0).contains(&value) {
                return Err(LabelError::ValueOutOfRange { what, value });
            }
        }
        Ok(())
    }
}

/// One of the seven expression classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExpressionLabel(u8);

impl ExpressionLabel {
    pub const NEUTRAL: Self = Self(0);
    pub const ANGER: Self = Self(1);
    pub const DISGUST: Self = Self(2);
    pub const FEAR: Self = Self(3);
    pub const HAPPINESS: Self = Self(4);
    pub const SADNESS: Self = Self(5);
    pub const SURPRISE: Self = Self(6);

    /// The six basic (non-neutral) emotions in canonical order.
    pub const BASIC: [Self; 6] = [
        Self::ANGER,
        Self::DISGUST,
        Self::FEAR,
        Self::HAPPINESS,
        Self::SADNESS,
        Self::SURPRISE,
    ];

    pub fn new(class_id: usize) -> Result<Self, LabelError> {
        if class_id < NUM_EXPRESSIONS {
            Ok(Self(class_id as u8))
        } else {
            Err(LabelError::UnknownClass(class_id))
        }
    }

    pub fn from_name(name: &str) -> Result<Self, LabelError> {
        expression_id(name).map(|id| Self(id as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        EXPRESSION_NAMES[self.index()]
    }

    pub fn is_neutral(self) -> bool {
        self.0 == 0
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..NUM_EXPRESSIONS as u8).map(Self)
    }
}

impl fmt::Display for ExpressionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name of an expression class id.
pub fn expression_name(class_id: usize) -> Result<&'static str, LabelError> {
    EXPRESSION_NAMES
        .get(class_id)
        .copied()
        .ok_or(LabelError::UnknownClass(class_id))
}

/// Inverse of [`expression_name`]. Accepts a few common aliases
/// ("happy", "sad", "surprised", ...).
pub fn expression_id(name: &str) -> Result<usize, LabelError> {
    let lower = name.trim().to_ascii_lowercase();
    let canonical = match lower.as_str() {
        "happy" => "happiness",
        "sad" => "sadness",
        "surprised" => "surprise",
        "angry" => "anger",
        "disgusted" => "disgust",
        "fearful" | "afraid" => "fear",
        other => other,
    };
    EXPRESSION_NAMES
        .iter()
        .position(|n| *n == canonical)
        .ok_or_else(|| LabelError::UnknownName(name.to_string()))
}

/// Position of an AU id in the canonical 17-AU ordering.
pub fn au_index(au_id: u32) -> Result<usize, LabelError> {
    AU_IDS
        .iter()
        .position(|&id| u32::from(id) == au_id)
        .ok_or(LabelError::UnknownAU(au_id))
}

/// Binary AU activations with a per-AU annotation mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AUVector {
    pub values: [bool; NUM_AUS],
    pub mask: [bool; NUM_AUS],
}

impl Default for AUVector {
    fn default() -> Self {
        Self {
            values: [false; NUM_AUS],
            mask: [false; NUM_AUS],
        }
    }
}

impl AUVector {
    /// Every AU annotated, all inactive.
    pub fn fully_annotated() -> Self {
        Self {
            values: [false; NUM_AUS],
            mask: [true; NUM_AUS],
        }
    }

    /// Fully annotated vector with exactly the given AU ids active.
    pub fn from_active(active: &[u32]) -> Result<Self, LabelError> {
        let mut v = Self::fully_annotated();
        for &au in active {
            v.values[au_index(au)?] = true;
        }
        Ok(v)
    }

    pub fn is_active(&self, au_id: u32) -> bool {
        au_index(au_id).map(|i| self.mask[i] && self.values[i]).unwrap_or(false)
    }

    pub fn is_annotated(&self, au_id: u32) -> bool {
        au_index(au_id).map(|i| self.mask[i]).unwrap_or(false)
    }

    pub fn annotated_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        for ((&v, &m), &au) in self.values.iter().zip(&self.mask).zip(&AU_IDS) {
            if v && !m {
                return Err(LabelError::BadMask { au });
            }
        }
        Ok(())
    }

    /// 17-character form over `{0,1,-}`; `-` marks an unannotated AU.
    pub fn to_payload(&self) -> String {
        (0..NUM_AUS)
            .map(|i| match (self.mask[i], self.values[i]) {
                (false, _) => '-',
                (true, true) => '1',
                (true, false) => '0',
            })
            .collect()
    }

    pub fn from_payload(s: &str) -> Option<Self> {
        if s.chars().count() != NUM_AUS {
            return None;
        }
        let mut v = Self::default();
        for (i, c) in s.chars().enumerate() {
            match c {
                '-' => {}
                '0' => v.mask[i] = true,
                '1' => {
                    v.mask[i] = true;
                    v.values[i] = true;
                }
                _ => return None,
            }
        }
        Some(v)
    }
}

/// A compound expression made of two distinct basic emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompoundLabel {
    pub class_id: usize,
    pub constituents: (ExpressionLabel, ExpressionLabel),
}

impl CompoundLabel {
    pub fn new(class_id: usize, emo1: ExpressionLabel, emo2: ExpressionLabel) -> Result<Self, LabelError> {
        if emo1 == emo2 || emo1.is_neutral() || emo2.is_neutral() {
            return Err(LabelError::BadCompound);
        }
        Ok(Self {
            class_id,
            constituents: (emo1, emo2),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Which kind of ground truth a sample carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Va,
    Expr,
    Au,
    Compound,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Va => "VA",
            Task::Expr => "EXPR",
            Task::Au => "AU",
            Task::Compound => "COMPOUND",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VA" => Some(Task::Va),
            "EXPR" => Some(Task::Expr),
            "AU" => Some(Task::Au),
            "COMPOUND" => Some(Task::Compound),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Va(ValenceArousal),
    Expr(ExpressionLabel),
    Au(AUVector),
    /// Index into the configured compound class list.
    Compound(usize),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Va(_) => Task::Va,
            Label::Expr(_) => Task::Expr,
            Label::Au(_) => Task::Au,
            Label::Compound(_) => Task::Compound,
        }
    }
}

/// One data point: precomputed features plus a single task label.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub id: String,
    pub split: Split,
    pub sequence_id: Option<String>,
    pub utterance_id: Option<String>,
    pub frame_index: Option<usize>,
    pub features: Vec<f64>,
    pub audio_features: Option<Vec<f64>>,
    pub landmarks: Option<Vec<f64>>,
    pub label: Label,
}

/// Check the type invariants of a sample against the dataset's feature width.
pub fn validate_sample(sample: &AnnotatedSample, feature_dim: usize) -> Result<(), LabelError> {
    if sample.features.len() != feature_dim {
        return Err(LabelError::DimensionMismatch {
            expected: feature_dim,
            found: sample.features.len(),
        });
    }
    if sample.features.iter().any(|x| !x.is_finite()) {
        return Err(LabelError::NonFinite("features"));
    }
    if let Some(audio) = &sample.audio_features {
        if audio.iter().any(|x| !x.is_finite()) {
            return Err(LabelError::NonFinite("audio_features"));
        }
    }
    match &sample.label {
        Label::Va(va) => va.validate(),
        Label::Expr(_) => Ok(()),
        Label::Au(aus) => aus.validate(),
        Label::Compound(_) => Ok(()),
    }
}

/// Per-frame model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub frame_index: Option<usize>,
    pub valence: f64,
    pub arousal: f64,
    pub expr_probs: [f64; NUM_EXPRESSIONS],
    pub au_probs: [f64; NUM_AUS],
}

impl PredictionRecord {
    pub fn au_prob(&self, au_id: u32) -> Option<f64> {
        au_index(au_id).ok().map(|i| self.au_probs[i])
    }
}
