//! Evaluation metrics: concordance correlation, MSE, F1 variants,
//! confusion-matrix recall, AFA and the weighted `E_total` composites.
//!
//! Degenerate inputs (constant series, classless F1) do not fail. They
//! return a conventional value with `degenerate = true` so batch
//! evaluation never aborts.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("class {class} has no samples")]
    EmptyRow { class: usize },
    #[error("label {label} is not below class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} is outside [0, 1]")]
    ValueOutOfRange(f64),
}

/// A metric value together with a flag for degenerate input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate(value: f64) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

/// Predictions and annotations of one continuous dimension.
#[derive(Debug, Clone, Copy)]
pub struct SeriesPair<'a> {
    pub predictions: &'a [f64],
    pub annotations: &'a [f64],
}

impl<'a> SeriesPair<'a> {
    pub fn new(predictions: &'a [f64], annotations: &'a [f64]) -> Result<Self, MetricError> {
        if predictions.len() != annotations.len() {
            return Err(MetricError::LengthMismatch(predictions.len(), annotations.len()));
        }
        if predictions.iter().chain(annotations).any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self {
            predictions,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    }
}

/// Concordance correlation coefficient with population (1/N) moments.
///
/// Both series constant with equal means gives 0/0; that case returns 0
/// flagged as degenerate.
pub fn ccc(pair: SeriesPair<'_>) -> Result<Score, MetricError> {
    if pair.len() < 2 {
        return Err(MetricError::TooShort {
            needed: 2,
            got: pair.len(),
        });
    }
    let m = moments(pair.annotations, pair.predictions);
    let mean_diff = m.mean_x - m.mean_y;
    let den = m.var_x + m.var_y + mean_diff * mean_diff;
    if den == 0.0 {
        return Ok(Score::degenerate(0.0));
    }
    Ok(Score::ok(2.0 * m.cov / den))
}

/// Pearson correlation; 0 flagged degenerate when either series is constant.
pub fn pearson(pair: SeriesPair<'_>) -> Result<Score, MetricError> {
    if pair.len() < 2 {
        return Err(MetricError::TooShort {
            needed: 2,
            got: pair.len(),
        });
    }
    let m = moments(pair.annotations, pair.predictions);
    let den = (m.var_x * m.var_y).sqrt();
    if den == 0.0 {
        return Ok(Score::degenerate(0.0));
    }
    Ok(Score::ok(m.cov / den))
}

pub fn mse(pair: SeriesPair<'_>) -> Result<f64, MetricError> {
    if pair.is_empty() {
        return Err(MetricError::TooShort { needed: 1, got: 0 });
    }
    let sum: f64 = pair
        .predictions
        .iter()
        .zip(pair.annotations)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok(sum / pair.len() as f64)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> Score {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Score::degenerate(1.0);
    }
    if tp == 0 {
        return Score::ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Score::ok(2.0 * precision * recall / (precision + recall))
}

/// Binary F1. With no positives in either vector the score is 1 (vacuous
/// agreement) and flagged degenerate.
pub fn f1_binary(pred: &[bool], truth: &[bool]) -> Result<Score, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

fn check_labels(pred: &[usize], truth: &[usize], classes: usize) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(MetricError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Unweighted mean of one-vs-rest F1 over `classes` classes.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<Score, MetricError> {
    check_labels(pred, truth, classes)?;
    let mut total = 0.0;
    let mut degenerate = false;
    for k in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == k, t == k) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let s = f1_from_counts(tp, fp, fn_);
        degenerate |= s.degenerate;
        total += s.value;
    }
    Ok(Score {
        value: total / classes as f64,
        degenerate,
    })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::TooShort { needed: 1, got: 0 });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let k = counts.len();
        assert!(counts.iter().all(|r| r.len() == k), "confusion matrix must be square");
        Self { counts }
    }

    pub fn from_labels(pred: &[usize], truth: &[usize], classes: usize) -> Result<Self, MetricError> {
        check_labels(pred, truth, classes)?;
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Mean per-class recall (mean of the row-normalised diagonal).
pub fn mean_diagonal(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for (k, row) in cm.counts.iter().enumerate() {
        let sum: u64 = row.iter().sum();
        if sum == 0 {
            return Err(MetricError::EmptyRow { class: k });
        }
        total += row[k] as f64 / sum as f64;
    }
    Ok(total / cm.classes() as f64)
}

/// Unweighted average recall; the same quantity as [`mean_diagonal`].
pub fn uar(cm: &ConfusionMatrix) -> Result<f64, MetricError> {
    mean_diagonal(cm)
}

/// Mean of macro F1 and accuracy over single-label predictions.
pub fn afa(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64, MetricError> {
    let f1 = macro_f1(pred, truth, classes)?.value;
    let acc = accuracy(pred, truth)?;
    Ok(afa_from_parts(f1, acc))
}

pub fn afa_from_parts(mean_f1: f64, mean_accuracy: f64) -> f64 {
    0.5 * (mean_f1 + mean_accuracy)
}

/// Per-label F1 and accuracy over a multi-label task (e.g. AUs), each
/// computed only over annotated entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelScores {
    pub per_label_f1: Vec<Option<Score>>,
    pub per_label_accuracy: Vec<Option<f64>>,
}

impl MultiLabelScores {
    pub fn mean_f1(&self) -> f64 {
        mean(self.per_label_f1.iter().flatten().map(|s| s.value))
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(self.per_label_accuracy.iter().flatten().copied())
    }

    pub fn afa(&self) -> f64 {
        afa_from_parts(self.mean_f1(), self.mean_accuracy())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `probs[i][k]` is binarised at `threshold`. Labels whose `mask` is false
/// everywhere score `None`.
pub fn multilabel_scores(
    probs: &[Vec<f64>],
    truth: &[Vec<bool>],
    mask: &[Vec<bool>],
    threshold: f64,
) -> Result<MultiLabelScores, MetricError> {
    if probs.len() != truth.len() || probs.len() != mask.len() {
        return Err(MetricError::LengthMismatch(probs.len(), truth.len()));
    }
    let labels = probs.first().map_or(0, Vec::len);
    let mut per_label_f1 = Vec::with_capacity(labels);
    let mut per_label_accuracy = Vec::with_capacity(labels);
    for k in 0..labels {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for i in 0..probs.len() {
            if probs[i].len() != labels || truth[i].len() != labels || mask[i].len() != labels {
                return Err(MetricError::LengthMismatch(probs[i].len(), labels));
            }
            if mask[i][k] {
                p.push(probs[i][k] >= threshold);
                t.push(truth[i][k]);
            }
        }
        if p.is_empty() {
            per_label_f1.push(None);
            per_label_accuracy.push(None);
            continue;
        }
        per_label_f1.push(Some(f1_binary(&p, &t)?));
        let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
        per_label_accuracy.push(Some(hits as f64 / p.len() as f64));
    }
    Ok(MultiLabelScores {
        per_label_f1,
        per_label_accuracy,
    })
}

fn check_unit(v: f64) -> Result<(), MetricError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(MetricError::ValueOutOfRange(v))
    }
}

/// `0.67·F1 + 0.33·TotalAccuracy` for expression recognition.
pub fn e_total_expr(f1: f64, total_acc: f64) -> Result<f64, MetricError> {
    check_unit(f1)?;
    check_unit(total_acc)?;
    Ok(0.67 * f1 + 0.33 * total_acc)
}

/// `0.5·meanF1 + 0.5·TotalAccuracy` for AU detection.
pub fn e_total_au(mean_f1: f64, total_acc: f64) -> Result<f64, MetricError> {
    check_unit(mean_f1)?;
    check_unit(total_acc)?;
    Ok(0.5 * mean_f1 + 0.5 * total_acc)
}

/// Flat `name = value` report with six decimals, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.entries {
            let _ = writeln!(out, "{name} = {value:.6}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (name, value) = line.split_once('=')?;
            entries.push((name.trim().to_string(), value.trim().parse().ok()?));
        }
        Some(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ccc_of(x: &[f64], y: &[f64]) -> Score {
        ccc(SeriesPair::new(y, x).unwrap()).unwrap()
    }

    #[test]
    fn ccc_examples() {
        assert_eq!(ccc_of(&[-1.0, 0.0, 1.0], &[-1.0, 0.0, 1.0]).value, 1.0);
        assert_eq!(ccc_of(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0]).value, -1.0);
        // 35/38 by exact moment arithmetic.
        let c = ccc_of(&[0.5, 0.0, -0.5], &[0.4, 0.1, -0.3]).value;
        assert!((c - 0.921_052_631_578_947_4).abs() < 1e-12, "{c}");
    }

    #[test]
    fn ccc_degenerate_and_short() {
        let s = ccc_of(&[0.3, 0.3], &[0.3, 0.3]);
        assert!(s.degenerate);
        assert_eq!(s.value, 0.0);
        // constant but shifted: well defined, zero covariance
        let s = ccc_of(&[0.3, 0.3], &[0.1, 0.1]);
        assert!(!s.degenerate);
        assert_eq!(s.value, 0.0);
        assert!(ccc(SeriesPair::new(&[1.0], &[1.0]).unwrap()).is_err());
        assert!(SeriesPair::new(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        let m = |x: &[f64], y: &[f64]| mse(SeriesPair::new(y, x).unwrap()).unwrap();
        assert_eq!(m(&[0.2, 0.4], &[0.2, 0.4]), 0.0);
        assert_eq!(m(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert_eq!(m(&[0.0, 1.0], &[1.0, 3.0]), 2.5);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(
            f1_binary(&[true, false, true], &[true, false, true]).unwrap().value,
            1.0
        );
        let s = f1_binary(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert_eq!(s.value, 0.5);
        let s = f1_binary(&[false, false], &[false, false]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.value, 1.0);
        assert_eq!(f1_binary(&[false, false], &[true, false]).unwrap().value, 0.0);
        assert!(f1_binary(&[true], &[true, false]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 1], &[0, 1, 1], 2).unwrap().value, 1.0);
        assert_eq!(macro_f1(&[0, 1], &[1, 0], 2).unwrap().value, 0.0);
        let v = macro_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap().value;
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn mean_diagonal_examples() {
        let id = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![0, 5]]);
        assert_eq!(mean_diagonal(&id).unwrap(), 1.0);
        let cm = ConfusionMatrix::from_counts(vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(mean_diagonal(&cm).unwrap(), 0.75);
        let empty = ConfusionMatrix::from_counts(vec![vec![1, 0], vec![0, 0]]);
        assert_eq!(mean_diagonal(&empty), Err(MetricError::EmptyRow { class: 1 }));
    }

    #[test]
    fn uar_examples() {
        let cm = ConfusionMatrix::from_labels(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(uar(&cm).unwrap(), 0.75);
        assert_eq!(cm.total(), 3);
        let perfect = ConfusionMatrix::from_labels(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(uar(&perfect).unwrap(), 1.0);
    }

    #[test]
    fn uar_of_random_guessing_is_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let cm = ConfusionMatrix::from_labels(&pred, &truth, 2).unwrap();
        assert!((uar(&cm).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn afa_examples() {
        assert_eq!(afa(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert!((afa_from_parts(0.5, 0.7) - 0.6).abs() < 1e-15);
        assert_eq!(afa(&[1, 1, 0, 0], &[1, 0, 0, 1], 2).unwrap(), 0.5);
    }

    #[test]
    fn e_total_examples() {
        assert_eq!(e_total_expr(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(e_total_au(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(e_total_expr(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(e_total_au(0.0, 0.0).unwrap(), 0.0);
        assert!((e_total_expr(0.6, 0.3).unwrap() - 0.501).abs() < 1e-15);
        assert!(e_total_expr(1.2, 0.3).is_err());
    }

    #[test]
    fn multilabel_respects_mask() {
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let truth = vec![vec![true, false], vec![false, false]];
        let mask = vec![vec![true, false], vec![true, false]];
        let s = multilabel_scores(&probs, &truth, &mask, 0.5).unwrap();
        assert_eq!(s.per_label_f1[1], None);
        assert_eq!(s.per_label_f1[0].unwrap().value, 1.0);
        assert_eq!(s.mean_accuracy(), 1.0);
        assert_eq!(s.afa(), 1.0);
    }

    #[test]
    fn report_format() {
        let mut r = MetricReport::new();
        r.push("va.ccc_valence", 0.5);
        r.push("expr.f1", 1.0 / 3.0);
        assert_eq!(r.render(), "va.ccc_valence = 0.500000\nexpr.f1 = 0.333333\n");
        assert_eq!(
            MetricReport::parse(&r.render()).unwrap().get("va.ccc_valence"),
            Some(0.5)
        );
    }

    fn series(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, n)
    }

    fn non_constant(x: &[f64]) -> bool {
        x.iter().any(|v| (v - x[0]).abs() > 1e-6)
    }

    proptest! {
        #[test]
        fn ccc_symmetric((x, y) in (2usize..40).prop_flat_map(|n| (series(n), series(n)))) {
            let a = ccc_of(&x, &y).value;
            let b = ccc_of(&y, &x).value;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ccc_self_is_one(x in (2usize..40).prop_flat_map(series)) {
            prop_assume!(non_constant(&x));
            prop_assert!((ccc_of(&x, &x).value - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ccc_attenuates_pearson((x, y) in (2usize..40).prop_flat_map(|n| (series(n), series(n)))) {
            prop_assume!(non_constant(&x) && non_constant(&y));
            let c = ccc_of(&x, &y).value;
            let r = pearson(SeriesPair::new(&y, &x).unwrap()).unwrap().value;
            prop_assert!(c.abs() <= r.abs() + 1e-12);
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn ccc_penalises_shift(x in (2usize..40).prop_flat_map(series), c in prop_oneof![-2.0f64..-1e-3, 1e-3f64..2.0]) {
            prop_assume!(non_constant(&x));
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!(ccc_of(&x, &shifted).value < 1.0);
        }

        #[test]
        fn classification_metrics_permutation_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
            let (p1, t1) = split(&pairs);
            let (p2, t2) = split(&shuffled);
            prop_assert_eq!(macro_f1(&p1, &t1, 4).unwrap(), macro_f1(&p2, &t2, 4).unwrap());
            prop_assert_eq!(accuracy(&p1, &t1).unwrap(), accuracy(&p2, &t2).unwrap());
            prop_assert_eq!(
                ConfusionMatrix::from_labels(&p1, &t1, 4).unwrap(),
                ConfusionMatrix::from_labels(&p2, &t2, 4).unwrap()
            );
        }
    }
}
