//! Central finite-difference checks of every layer and loss against the
//! reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affect_types::{AUVector, ExpressionLabel, Label, ValenceArousal, NUM_AUS, NUM_EXPRESSIONS};
use crate::autodiff::{dense, dropout, gru_step, Graph, GruCell, GruVars, Tensor, Var};
use crate::losses::{
    build_targets, ccc_loss, cce_loss, distribution_matching_loss, masked_bce_loss, multitask_loss, objective,
    soft_target_cce, Coupling, LossWeights, ObjectiveConfig, TaskTerms,
};
use crate::models::{FrameInput, Head, Model, ModelDims, ModelSpec, Recurrent, SequenceBatch, TrunkSpec};
use crate::relatedness::RelatednessTable;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-5)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var, String> + 'a;

/// Largest relative error over every coordinate of every input.
pub fn check_function(f: &Builder<'_>, inputs: &[Tensor], eps: f64) -> Result<f64, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root).map_err(|e| e.to_string())?;
    let eval = |inputs: &[Tensor]| -> Result<f64, String> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        g.value(root).item().ok_or_else(|| "non-scalar output".to_string())
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, &inputs[i]);
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

/// Names of the checks run by [`run_suite`].
pub const CHECKS: [&str; 11] = [
    "dense",
    "gru",
    "dropout_off",
    "dropout_fixed_mask",
    "ccc_loss",
    "cce_loss",
    "masked_bce_loss",
    "multitask_loss",
    "distribution_matching_loss",
    "soft_target_cce",
    "model_objective",
];

/// Run one named check at `points` random inputs.
pub fn run_check(name: &'static str, points: usize, seed: u64, eps: f64) -> Result<CheckResult, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = RelatednessTable::cognitive();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let err = match name {
            "dense" => {
                let inputs = [
                    uniform(&mut rng, &[3, 4], 1.0),
                    uniform(&mut rng, &[4, 5], 1.0),
                    uniform(&mut rng, &[1, 5], 1.0),
                ];
                let w = uniform(&mut rng, &[3, 5], 1.0);
                check_function(
                    &|g, v| {
                        let y = dense(g, v[0], v[1], v[2]).map_err(|e| e.to_string())?;
                        let y = g.mul_const(y, &w).map_err(|e| e.to_string())?;
                        Ok(g.sum(y))
                    },
                    &inputs,
                    eps,
                )?
            }
            "gru" => {
                let (i, h, b) = (3, 4, 2);
                let mut inputs = vec![uniform(&mut rng, &[b, i], 1.0), uniform(&mut rng, &[b, h], 0.9)];
                for _ in 0..3 {
                    inputs.push(uniform(&mut rng, &[i + h, h], 0.8));
                    inputs.push(uniform(&mut rng, &[1, h], 0.5));
                }
                let x2 = uniform(&mut rng, &[b, i], 1.0);
                let w = uniform(&mut rng, &[b, h], 1.0);
                let cell = GruCell::new(i, h);
                check_function(
                    &|g, v| {
                        let vars = GruVars {
                            w_update: v[2],
                            b_update: v[3],
                            w_reset: v[4],
                            b_reset: v[5],
                            w_candidate: v[6],
                            b_candidate: v[7],
                        };
                        // two steps so gradients flow through the recurrence
                        let h1 = gru_step(g, &cell, &vars, v[0], v[1]).map_err(|e| e.to_string())?;
                        let x2 = g.constant(x2.clone());
                        let h2 = gru_step(g, &cell, &vars, x2, h1).map_err(|e| e.to_string())?;
                        let y = g.mul_const(h2, &w).map_err(|e| e.to_string())?;
                        Ok(g.sum(y))
                    },
                    &inputs,
                    eps,
                )?
            }
            "dropout_off" | "dropout_fixed_mask" => {
                let train = name == "dropout_fixed_mask";
                let mask_seed: u64 = rng.random();
                let inputs = [uniform(&mut rng, &[4, 6], 1.0)];
                let w = uniform(&mut rng, &[4, 6], 1.0);
                check_function(
                    &|g, v| {
                        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                        let y = dropout(g, v[0], 0.3, train, &mut r).map_err(|e| e.to_string())?;
                        let y = g.tanh(y);
                        let y = g.mul_const(y, &w).map_err(|e| e.to_string())?;
                        Ok(g.sum(y))
                    },
                    &inputs,
                    eps,
                )?
            }
            "ccc_loss" => {
                let inputs = [uniform(&mut rng, &[6, 2], 1.0)];
                let truth = uniform(&mut rng, &[6, 2], 1.0);
                check_function(
                    &|g, v| ccc_loss(g, v[0], &truth).map_err(|e| e.to_string()),
                    &inputs,
                    eps,
                )?
            }
            "cce_loss" => {
                let inputs = [uniform(&mut rng, &[5, 7], 3.0)];
                let truth: Vec<usize> = (0..5).map(|_| rng.random_range(0..7)).collect();
                check_function(
                    &|g, v| cce_loss(g, v[0], &truth).map_err(|e| e.to_string()),
                    &inputs,
                    eps,
                )?
            }
            "masked_bce_loss" => {
                let inputs = [uniform(&mut rng, &[4, NUM_AUS], 3.0)];
                let targets: Vec<[f64; NUM_AUS]> = (0..4)
                    .map(|_| std::array::from_fn(|_| f64::from(rng.random_bool(0.5))))
                    .collect();
                let weights: Vec<[f64; NUM_AUS]> = (0..4)
                    .map(|_| {
                        std::array::from_fn(|_| {
                            if rng.random_bool(0.7) {
                                rng.random_range(0.2..1.0)
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect();
                check_function(
                    &|g, v| masked_bce_loss(g, v[0], &targets, &weights).map_err(|e| e.to_string()),
                    &inputs,
                    eps,
                )?
            }
            "multitask_loss" => {
                let inputs = [
                    uniform(&mut rng, &[4, 7], 2.0),
                    uniform(&mut rng, &[4, NUM_AUS], 2.0),
                    uniform(&mut rng, &[4, 2], 1.0),
                ];
                let expr: Vec<usize> = (0..4).map(|_| rng.random_range(0..7)).collect();
                let au_t: Vec<[f64; NUM_AUS]> = (0..4)
                    .map(|_| std::array::from_fn(|_| f64::from(rng.random_bool(0.5))))
                    .collect();
                let va = uniform(&mut rng, &[4, 2], 1.0);
                let weights = LossWeights::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)).unwrap();
                check_function(
                    &|g, v| {
                        let terms = TaskTerms {
                            emo: Some(cce_loss(g, v[0], &expr).map_err(|e| e.to_string())?),
                            au: Some(masked_bce_loss(g, v[1], &au_t, &[[1.0; NUM_AUS]; 4]).map_err(|e| e.to_string())?),
                            va: Some(ccc_loss(g, v[2], &va).map_err(|e| e.to_string())?),
                        };
                        multitask_loss(g, terms, weights).map_err(|e| e.to_string())
                    },
                    &inputs,
                    eps,
                )?
            }
            "distribution_matching_loss" => {
                let inputs = [uniform(&mut rng, &[3, 7], 2.0), uniform(&mut rng, &[3, NUM_AUS], 2.0)];
                let reweight = rng.random_bool(0.5);
                check_function(
                    &|g, v| {
                        let p = g.softmax_rows(v[0]);
                        let a = g.sigmoid(v[1]);
                        distribution_matching_loss(g, p, a, &table, reweight).map_err(|e| e.to_string())
                    },
                    &inputs,
                    eps,
                )?
            }
            "soft_target_cce" => {
                let inputs = [uniform(&mut rng, &[3, 7], 2.0)];
                let soft: Vec<[f64; NUM_EXPRESSIONS]> = (0..3)
                    .map(|_| {
                        let raw: [f64; NUM_EXPRESSIONS] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
                        let s: f64 = raw.iter().sum();
                        raw.map(|x| x / s)
                    })
                    .collect();
                check_function(
                    &|g, v| {
                        let p = g.softmax_rows(v[0]);
                        soft_target_cce(g, p, &soft).map_err(|e| e.to_string())
                    },
                    &inputs,
                    eps,
                )?
            }
            "model_objective" => model_objective_error(&mut rng, &table, eps)?,
            other => return Err(format!("unknown check {other:?}")),
        };
        worst = worst.max(err);
    }
    Ok(CheckResult {
        name,
        points,
        max_rel_error: worst,
    })
}

/// Gradient of the full coupled objective with respect to every parameter
/// of a small recurrent multi-head model.
fn model_objective_error(rng: &mut ChaCha8Rng, table: &RelatednessTable, eps: f64) -> Result<f64, String> {
    let spec = ModelSpec::new(
        TrunkSpec {
            taps: vec![0, 1],
            recurrent: Recurrent::PerTap { hidden: 2, layers: 1 },
            ..TrunkSpec::dense(vec![3, 3])
        },
        vec![Head::Va, Head::Expr, Head::Au],
    );
    let dims = ModelDims::visual(3);
    let mut model = Model::build(spec, dims, rng.random()).map_err(|e| e.to_string())?;
    // zero biases put dead-ReLU rows exactly on the kink
    for t in model.params_mut().tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let model = model;
    let (b, t) = (3, 2);
    let seqs: Vec<Vec<FrameInput>> = (0..b)
        .map(|_| {
            (0..t)
                .map(|_| FrameInput::visual((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect()
        })
        .collect();
    let batch = SequenceBatch::from_sequences(&seqs).map_err(|e| e.to_string())?;
    let labels: Vec<Label> = (0..b * t)
        .map(|r| match r % 3 {
            0 => Label::Va(ValenceArousal::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).unwrap()),
            1 => Label::Expr(ExpressionLabel::new(rng.random_range(1..7)).unwrap()),
            _ => Label::Au(AUVector::from_active(&[12, 25]).unwrap()),
        })
        .collect();
    let targets = build_targets(&labels, Coupling::SoftAndDistr, table, true);
    let cfg = ObjectiveConfig {
        weights: LossWeights::default(),
        coupling: Coupling::SoftAndDistr,
        table,
        reweight: true,
    };
    let inputs: Vec<Tensor> = model.params().tensors().cloned().collect();
    check_function(
        &|g, v| {
            let bound = model.bind_vars(v.to_vec());
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let out = model
                .forward(g, &bound, &batch, false, &mut r)
                .map_err(|e| e.to_string())?;
            let (loss, _) = objective(g, &out.predictions, &targets, &cfg).map_err(|e| e.to_string())?;
            Ok(loss)
        },
        &inputs,
        eps,
    )
}

/// Every check in [`CHECKS`].
pub fn run_suite(points: usize, seed: u64) -> Result<Vec<CheckResult>, String> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            // the whole-model check is far costlier per point
            let n = if name == "model_objective" {
                points.div_ceil(10)
            } else {
                points
            };
            run_check(name, n, seed.wrapping_add(i as u64), DEFAULT_EPS)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-4).abs() < 1e-18);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn detects_wrong_gradient() {
        // the graph computes x², but the checked function says 3x² via a
        // constant that the analytic pass does not see
        let bad = |g: &mut Graph, v: &[Var]| -> Result<Var, String> {
            let sq = g.mul(v[0], v[0]).map_err(|e| e.to_string())?;
            let s = g.sum(sq);
            if g.requires_grad(v[0]) {
                Ok(s)
            } else {
                Ok(g.scale(s, 3.0))
            }
        };
        let err = check_function(&bad, &[Tensor::row_vector(vec![0.7, -1.2])], DEFAULT_EPS).unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn every_check_passes_on_a_few_points() {
        for name in CHECKS {
            let r = run_check(name, 3, 11, DEFAULT_EPS).unwrap();
            assert!(r.passed(), "{name}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn unknown_check() {
        assert!(run_check("nope", 1, 0, DEFAULT_EPS).is_err());
    }
}
