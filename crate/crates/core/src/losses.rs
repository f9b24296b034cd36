//! Training objectives, all built on the autodiff graph so every term is
//! differentiable with respect to the model outputs.
//!
//! Every `log` of a probability is taken after clamping the probability
//! into `[PROB_EPS, 1 - PROB_EPS]`.

use thiserror::Error;

use crate::affect_types::{AUVector, ExpressionLabel, Label, NUM_AUS, NUM_EXPRESSIONS};
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::relatedness::{
    coannotate_aus_to_emotion, coannotate_emotion_to_aus, soft_coannotate, RelatednessError, RelatednessTable,
};

pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("CCC needs at least {needed} frames per batch, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("no sample in the batch carries an annotated AU")]
    EmptyMaskBatch,
    #[error("CCC denominator is zero (constant predictions and annotations with equal means)")]
    DegenerateCcc,
    #[error("row {row} is not a probability distribution")]
    BadDistribution { row: usize },
    #[error("invalid loss weight {0}")]
    BadWeight(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Graph(#[from] AutodiffError),
    #[error(transparent)]
    Relatedness(#[from] RelatednessError),
}

/// Weights of the AU (`lambda1`) and VA (`lambda2`) terms relative to the
/// expression term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self, LossError> {
        for w in [lambda1, lambda2] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::BadWeight(w));
            }
        }
        Ok(Self { lambda1, lambda2 })
    }
}

/// How the expression and AU tasks are coupled during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    #[default]
    None,
    /// Hard co-annotation in both directions (label augmentation).
    CoAnnotation,
    /// AU samples get a soft expression label matched by soft-target CE.
    SoftCoAnnotation,
    /// Predicted AUs are matched to the emotion→AU mixture on every sample.
    DistrMatching,
    SoftAndDistr,
}

impl Coupling {
    pub fn as_str(self) -> &'static str {
        match self {
            Coupling::None => "none",
            Coupling::CoAnnotation => "coannotation",
            Coupling::SoftCoAnnotation => "soft_coannotation",
            Coupling::DistrMatching => "distr_matching",
            Coupling::SoftAndDistr => "soft+distr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "none" => Some(Coupling::None),
            "coannotation" => Some(Coupling::CoAnnotation),
            "soft_coannotation" => Some(Coupling::SoftCoAnnotation),
            "distr_matching" => Some(Coupling::DistrMatching),
            "soft+distr" => Some(Coupling::SoftAndDistr),
            _ => None,
        }
    }

    pub fn uses_soft_labels(self) -> bool {
        matches!(self, Coupling::SoftCoAnnotation | Coupling::SoftAndDistr)
    }

    pub fn uses_distr_matching(self) -> bool {
        matches!(self, Coupling::DistrMatching | Coupling::SoftAndDistr)
    }
}

/// Per-frame training targets after coupling augmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameTargets {
    pub va: Option<[f64; 2]>,
    pub expr: Option<usize>,
    /// AU targets and per-AU weights (`δ`, or co-annotation weights).
    pub au: Option<([f64; NUM_AUS], [f64; NUM_AUS])>,
    pub soft_expr: Option<[f64; NUM_EXPRESSIONS]>,
    pub compound: Option<usize>,
}

fn au_targets_from_vector(aus: &AUVector) -> ([f64; NUM_AUS], [f64; NUM_AUS]) {
    let mut t = [0.0; NUM_AUS];
    let mut w = [0.0; NUM_AUS];
    for i in 0..NUM_AUS {
        if aus.mask[i] {
            w[i] = 1.0;
            t[i] = if aus.values[i] { 1.0 } else { 0.0 };
        }
    }
    (t, w)
}

/// Turn ground-truth labels into loss targets, applying the coupling's
/// label augmentation.
pub fn build_targets(
    labels: &[Label],
    coupling: Coupling,
    table: &RelatednessTable,
    reweight: bool,
) -> Vec<FrameTargets> {
    labels
        .iter()
        .map(|label| {
            let mut t = FrameTargets::default();
            match label {
                Label::Va(va) => t.va = Some([va.valence, va.arousal]),
                Label::Expr(e) => {
                    t.expr = Some(e.index());
                    if coupling == Coupling::CoAnnotation {
                        let targets = coannotate_emotion_to_aus(*e, table);
                        if !targets.is_empty() {
                            let mut values = [0.0; NUM_AUS];
                            let mut weights = [0.0; NUM_AUS];
                            for a in targets {
                                let i = crate::affect_types::au_index(a.au_id).expect("table AU");
                                values[i] = if a.target { 1.0 } else { 0.0 };
                                weights[i] = if reweight { a.weight } else { 1.0 };
                            }
                            t.au = Some((values, weights));
                        }
                    }
                }
                Label::Au(aus) => {
                    t.au = Some(au_targets_from_vector(aus));
                    match coupling {
                        Coupling::CoAnnotation => {
                            t.expr = coannotate_aus_to_emotion(aus, table).map(ExpressionLabel::index);
                        }
                        c if c.uses_soft_labels() => {
                            t.soft_expr = soft_coannotate(aus, table, reweight).ok().map(|s| s.probabilities);
                        }
                        _ => {}
                    }
                }
                Label::Compound(k) => t.compound = Some(*k),
            }
            t
        })
        .collect()
}

/// `1 - 0.5·(ρ_valence + ρ_arousal)` over the rows of an `N×2` prediction
/// (column 0 valence, column 1 arousal).
pub fn ccc_loss(g: &mut Graph, pred_va: Var, truth_va: &Tensor) -> Result<Var, LossError> {
    let n = g.value(pred_va).rows();
    if g.value(pred_va).cols() != 2 || truth_va.dims() != (n, 2) {
        return Err(AutodiffError::ShapeMismatch {
            op: "ccc_loss",
            left: g.value(pred_va).shape().to_vec(),
            right: truth_va.shape().to_vec(),
        }
        .into());
    }
    if n < 2 {
        return Err(LossError::BatchTooSmall { needed: 2, got: n });
    }
    // annotation moments are constants
    let mut truth_mean = [0.0; 2];
    for i in 0..n {
        truth_mean[0] += truth_va.get(i, 0);
        truth_mean[1] += truth_va.get(i, 1);
    }
    truth_mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| [truth_va.get(i, 0) - truth_mean[0], truth_va.get(i, 1) - truth_mean[1]])
        .collect();
    let mut truth_var = [0.0; 2];
    for (k, d) in centered.iter().enumerate() {
        truth_var[k % 2] += d * d / n as f64;
    }
    let centered = Tensor::matrix(n, 2, centered);

    let pred_mean = g.mean_rows(pred_va);
    let neg_mean = g.scale(pred_mean, -1.0);
    let pred_c = g.add_row(pred_va, neg_mean)?;
    let sq = g.mul(pred_c, pred_c)?;
    let pred_var = g.mean_rows(sq);
    let prod = g.mul_const(pred_c, &centered)?;
    let cov = g.mean_rows(prod);
    let tm = g.constant(Tensor::row_vector(truth_mean.to_vec()));
    let diff = g.sub(pred_mean, tm)?;
    let diff_sq = g.mul(diff, diff)?;
    let tv = g.constant(Tensor::row_vector(truth_var.to_vec()));
    let den = g.add(pred_var, tv)?;
    let den = g.add(den, diff_sq)?;
    if g.value(den).data().contains(&0.0) {
        return Err(LossError::DegenerateCcc);
    }
    let num = g.scale(cov, 2.0);
    let rho = g.div(num, den)?;
    let s = g.sum(rho);
    let half = g.scale(s, -0.5);
    Ok(g.offset(half, 1.0))
}

/// Mean categorical cross-entropy `-log softmax(logits)[truth]`.
pub fn cce_loss(g: &mut Graph, logits: Var, truth: &[usize]) -> Result<Var, LossError> {
    let (n, k) = g.value(logits).dims();
    if truth.len() != n || n == 0 {
        return Err(AutodiffError::ShapeMismatch {
            op: "cce_loss",
            left: vec![n, k],
            right: vec![truth.len()],
        }
        .into());
    }
    if let Some(&label) = truth.iter().find(|&&t| t >= k) {
        return Err(LossError::LabelOutOfRange { label, classes: k });
    }
    let ls = g.log_softmax_rows(logits);
    let picked = g.pick_per_row(ls, truth)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Masked binary cross-entropy. `weights[i][k]` is the mask `δ` (or a
/// co-annotation weight); each sample is normalised by its weight sum and
/// samples with no weight are skipped.
pub fn masked_bce_loss(
    g: &mut Graph,
    logits: Var,
    targets: &[[f64; NUM_AUS]],
    weights: &[[f64; NUM_AUS]],
) -> Result<Var, LossError> {
    let (n, k) = g.value(logits).dims();
    if k != NUM_AUS || targets.len() != n || weights.len() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "masked_bce_loss",
            left: vec![n, k],
            right: vec![targets.len(), weights.len()],
        }
        .into());
    }
    let valid = weights.iter().filter(|w| w.iter().sum::<f64>() > 0.0).count();
    if valid == 0 {
        return Err(LossError::EmptyMaskBatch);
    }
    let mut coef_pos = Vec::with_capacity(n * k);
    let mut coef_neg = Vec::with_capacity(n * k);
    for (t, w) in targets.iter().zip(weights) {
        let total: f64 = w.iter().sum();
        for j in 0..k {
            let c = if total > 0.0 {
                w[j] / (total * valid as f64)
            } else {
                0.0
            };
            coef_pos.push(c * t[j]);
            coef_neg.push(c * (1.0 - t[j]));
        }
    }
    let p = g.sigmoid(logits);
    let p = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = g.log(p);
    let q = g.one_minus(p);
    let log_q = g.log(q);
    let pos = g.mul_const(log_p, &Tensor::matrix(n, k, coef_pos))?;
    let neg = g.mul_const(log_q, &Tensor::matrix(n, k, coef_neg))?;
    let both = g.add(pos, neg)?;
    let s = g.sum(both);
    Ok(g.scale(s, -1.0))
}

/// Per-task loss terms; absent tasks contribute zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskTerms {
    pub emo: Option<Var>,
    pub au: Option<Var>,
    pub va: Option<Var>,
}

/// `L_emo + λ1·L_au + λ2·L_va`.
pub fn multitask_loss(g: &mut Graph, terms: TaskTerms, weights: LossWeights) -> Result<Var, LossError> {
    let mut acc: Option<Var> = terms.emo;
    for (term, w) in [(terms.au, weights.lambda1), (terms.va, weights.lambda2)] {
        if let Some(t) = term {
            let scaled = g.scale(t, w);
            acc = Some(match acc {
                Some(a) => g.add(a, scaled)?,
                None => scaled,
            });
        }
    }
    Ok(acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

fn check_rows_distribution(g: &Graph, probs: Var) -> Result<(), LossError> {
    let v = g.value(probs);
    for i in 0..v.rows() {
        let row = v.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(LossError::BadDistribution { row: i });
        }
    }
    Ok(())
}

/// `mean_x Σ_i -p(AU_i|x) · log q(AU_i|x)` where `q` is the emotion→AU
/// mixture of the predicted expression distribution.
pub fn distribution_matching_loss(
    g: &mut Graph,
    expr_probs: Var,
    au_probs: Var,
    table: &RelatednessTable,
    reweight: bool,
) -> Result<Var, LossError> {
    let (n, k) = g.value(expr_probs).dims();
    if k != NUM_EXPRESSIONS || g.value(au_probs).dims() != (n, NUM_AUS) {
        return Err(AutodiffError::ShapeMismatch {
            op: "distribution_matching_loss",
            left: vec![n, k],
            right: g.value(au_probs).shape().to_vec(),
        }
        .into());
    }
    check_rows_distribution(g, expr_probs)?;
    if let Some(i) = (0..n).find(|&i| g.value(au_probs).row(i).iter().any(|p| !(0.0..=1.0).contains(p))) {
        return Err(LossError::BadDistribution { row: i });
    }
    let cond = table.au_given_emotion(reweight);
    let cond = Tensor::from_rows(&cond);
    let q = g.matmul_const(expr_probs, &cond)?;
    let q = g.clamp(q, PROB_EPS, 1.0 - PROB_EPS);
    let log_q = g.log(q);
    let prod = g.mul(au_probs, log_q)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// `mean_x Σ_k -soft[k] · log p[k]`.
pub fn soft_target_cce(g: &mut Graph, expr_probs: Var, soft: &[[f64; NUM_EXPRESSIONS]]) -> Result<Var, LossError> {
    let (n, k) = g.value(expr_probs).dims();
    if k != NUM_EXPRESSIONS || soft.len() != n || n == 0 {
        return Err(AutodiffError::ShapeMismatch {
            op: "soft_target_cce",
            left: vec![n, k],
            right: vec![soft.len()],
        }
        .into());
    }
    check_rows_distribution(g, expr_probs)?;
    for (i, row) in soft.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(LossError::BadDistribution { row: i });
        }
    }
    let p = g.clamp(expr_probs, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = g.log(p);
    let coef = Tensor::matrix(n, k, soft.iter().flatten().map(|s| s / n as f64).collect());
    let prod = g.mul_const(log_p, &coef)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -1.0))
}

/// Per-frame model outputs on the graph; rows are frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchPredictions {
    pub va: Option<Var>,
    pub expr_logits: Option<Var>,
    pub expr_probs: Option<Var>,
    pub au_logits: Option<Var>,
    pub au_probs: Option<Var>,
    pub compound_logits: Option<Var>,
}

/// Scalar values of each component, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub emo: Option<f64>,
    pub au: Option<f64>,
    pub va: Option<f64>,
    pub soft: Option<f64>,
    pub distr: Option<f64>,
    pub compound: Option<f64>,
    pub total: f64,
}

/// Everything a training step needs to build its objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig<'a> {
    pub weights: LossWeights,
    pub coupling: Coupling,
    pub table: &'a RelatednessTable,
    pub reweight: bool,
}

/// Multi-task loss plus coupling terms (unit coefficients). Each task term
/// uses only the frames that carry that target; heads without targets in
/// the batch contribute nothing.
pub fn objective(
    g: &mut Graph,
    preds: &BatchPredictions,
    targets: &[FrameTargets],
    cfg: &ObjectiveConfig<'_>,
) -> Result<(Var, LossBreakdown), LossError> {
    let mut terms = TaskTerms::default();
    let mut breakdown = LossBreakdown::default();

    if let Some(logits) = preds.expr_logits {
        let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].expr.is_some()).collect();
        if !rows.is_empty() {
            let truth: Vec<usize> = rows.iter().map(|&i| targets[i].expr.unwrap()).collect();
            let sel = g.select_rows(logits, &rows)?;
            let l = cce_loss(g, sel, &truth)?;
            breakdown.emo = Some(g.value(l).data()[0]);
            terms.emo = Some(l);
        }
    }
    if let Some(logits) = preds.au_logits {
        let rows: Vec<usize> = (0..targets.len())
            .filter(|&i| targets[i].au.is_some_and(|(_, w)| w.iter().sum::<f64>() > 0.0))
            .collect();
        if !rows.is_empty() {
            let t: Vec<_> = rows.iter().map(|&i| targets[i].au.unwrap().0).collect();
            let w: Vec<_> = rows.iter().map(|&i| targets[i].au.unwrap().1).collect();
            let sel = g.select_rows(logits, &rows)?;
            let l = masked_bce_loss(g, sel, &t, &w)?;
            breakdown.au = Some(g.value(l).data()[0]);
            terms.au = Some(l);
        }
    }
    if let Some(va) = preds.va {
        let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].va.is_some()).collect();
        if !rows.is_empty() {
            let truth = Tensor::from_rows(&rows.iter().map(|&i| targets[i].va.unwrap()).collect::<Vec<_>>());
            let sel = g.select_rows(va, &rows)?;
            let l = ccc_loss(g, sel, &truth)?;
            breakdown.va = Some(g.value(l).data()[0]);
            terms.va = Some(l);
        }
    }
    let mut total = multitask_loss(g, terms, cfg.weights)?;

    if cfg.coupling.uses_soft_labels() {
        if let Some(probs) = preds.expr_probs {
            let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].soft_expr.is_some()).collect();
            if !rows.is_empty() {
                let soft: Vec<_> = rows.iter().map(|&i| targets[i].soft_expr.unwrap()).collect();
                let sel = g.select_rows(probs, &rows)?;
                let l = soft_target_cce(g, sel, &soft)?;
                breakdown.soft = Some(g.value(l).data()[0]);
                total = g.add(total, l)?;
            }
        }
    }
    if cfg.coupling.uses_distr_matching() {
        if let (Some(ep), Some(ap)) = (preds.expr_probs, preds.au_probs) {
            let l = distribution_matching_loss(g, ep, ap, cfg.table, cfg.reweight)?;
            breakdown.distr = Some(g.value(l).data()[0]);
            total = g.add(total, l)?;
        }
    }
    if let Some(logits) = preds.compound_logits {
        let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].compound.is_some()).collect();
        if !rows.is_empty() {
            let truth: Vec<usize> = rows.iter().map(|&i| targets[i].compound.unwrap()).collect();
            let sel = g.select_rows(logits, &rows)?;
            let l = cce_loss(g, sel, &truth)?;
            breakdown.compound = Some(g.value(l).data()[0]);
            total = g.add(total, l)?;
        }
    }
    breakdown.total = g.value(total).data()[0];
    Ok((total, breakdown))
}
