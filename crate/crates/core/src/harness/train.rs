//! Sampler-driven training, checkpoints with their model description, and
//! the per-epoch log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{model_from_text, model_to_text, RunConfig};
use super::dataset::{frame_input, group_sequences, Dataset};
use super::eval::evaluate;
use super::HarnessError;
use crate::affect_types::{AnnotatedSample, Split, Task};
use crate::autodiff::{load_checkpoint, save_checkpoint, AdamState, Graph, Tensor};
use crate::losses::{build_targets, objective, FrameTargets, LossBreakdown, ObjectiveConfig};
use crate::metrics::MetricReport;
use crate::models::{Body, Head, Model, ModelSpec, SequenceBatch};
use crate::relatedness::RelatednessTable;
use crate::sampler::TaskPartition;

/// Path of the model description that accompanies a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), HarnessError> {
    save_checkpoint(model.params(), path)?;
    let side = sidecar_path(path);
    std::fs::write(&side, model_to_text(model.spec(), model.dims())).map_err(|e| HarnessError::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<Model, HarnessError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| HarnessError::io(&side, e))?;
    let (spec, dims) = model_from_text(&text)?;
    Ok(Model::from_params(spec, dims, load_checkpoint(path)?)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub iterations: usize,
    /// Mean total loss over the epoch's iterations.
    pub loss: f64,
    /// Means of each component over the iterations where it was present.
    pub components: [Option<f64>; 6],
    pub val: Option<MetricReport>,
}

pub const COMPONENTS: [&str; 6] = ["emo", "au", "va", "soft", "distr", "compound"];
const VAL_KEYS: [&str; 4] = ["va.ccc_v", "va.ccc_a", "expr.mean_diagonal", "au.f1_macro"];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    /// Parameters copied from the initial model.
    pub loaded: Vec<String>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// One row per epoch; empty cells for absent values.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,lr,iterations,loss");
        for c in COMPONENTS {
            let _ = write!(s, ",{c}");
        }
        for k in VAL_KEYS {
            let _ = write!(s, ",val_{}", k.replace('.', "_"));
        }
        s.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = write!(s, "{},{},{},{}", e.epoch, e.lr, e.iterations, e.loss);
            for c in e.components {
                let _ = write!(s, ",{}", cell(c));
            }
            for k in VAL_KEYS {
                let _ = write!(s, ",{}", cell(e.val.as_ref().and_then(|r| r.get(k))));
            }
            s.push('\n');
        }
        s
    }
}

/// A training sequence: sample indices per step, `None` for padding.
#[derive(Debug, Clone)]
struct Unit {
    frames: Vec<Option<usize>>,
}

/// Consecutive windows of `seq_len` frames; the last window of a sequence
/// is padded by repeating its final frame without a label.
fn build_units(samples: &[&AnnotatedSample], members: &[usize], seq_len: usize) -> Vec<Unit> {
    let subset: Vec<&AnnotatedSample> = members.iter().map(|&i| samples[i]).collect();
    let mut units = Vec::new();
    for g in group_sequences(&subset) {
        for w in g.chunks(seq_len) {
            let mut frames: Vec<Option<usize>> = w.iter().map(|&j| Some(members[j])).collect();
            frames.resize(seq_len, None);
            units.push(Unit { frames });
        }
    }
    units
}

fn task_head(task: Task, spec: &ModelSpec) -> bool {
    match task {
        Task::Va => spec.has_head(Head::Va),
        Task::Expr => spec.has_head(Head::Expr),
        Task::Au => spec.has_head(Head::Au),
        Task::Compound => spec.compound_classes().is_some(),
    }
}

/// The model a configuration describes. With a base model the trunk comes
/// from the base and only the heads from the configuration.
fn initial_model(
    cfg: &RunConfig,
    data: &Dataset,
    base: Option<&Model>,
    config_dir: Option<&Path>,
) -> Result<(Model, Vec<String>), HarnessError> {
    let spec = match base {
        Some(b) => ModelSpec {
            body: b.spec().body.clone(),
            heads: cfg.heads.clone(),
        },
        None => cfg.model_spec(config_dir)?,
    };
    spec.validate()?;
    let dims = data.dims();
    let mut model = Model::build(spec, dims, cfg.seed)?;
    let mut loaded = Vec::new();
    if let Some(b) = base {
        if b.dims() != &dims {
            return Err(HarnessError::Config {
                line: 0,
                message: format!("base model expects inputs {:?}, data has {:?}", b.dims(), dims),
            });
        }
        loaded = model.params_mut().load_matching(b.params());
    }
    Ok((model, loaded))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn breakdown_parts(b: &LossBreakdown) -> [Option<f64>; 6] {
    [b.emo, b.au, b.va, b.soft, b.distr, b.compound]
}

/// Train on the dataset's train split. Validation metrics are logged per
/// epoch when a val split exists. `base` supplies initial parameters
/// (matched by name and shape) and, with `freeze_trunk`, only heads train.
pub fn train(
    cfg: &RunConfig,
    data: &Dataset,
    base: Option<&Model>,
    config_dir: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let table: RelatednessTable = cfg.relatedness.load()?;
    let (mut model, loaded) = initial_model(cfg, data, base, config_dir)?;
    let train: Vec<&AnnotatedSample> = data.split(Split::Train);
    let val: Vec<&AnnotatedSample> = data.split(Split::Val);

    let tasks: Vec<Task> = [Task::Va, Task::Expr, Task::Au, Task::Compound]
        .into_iter()
        .filter(|&t| task_head(t, model.spec()))
        .collect();
    let mut units = Vec::new();
    let mut sets = Vec::new();
    for &t in &tasks {
        let members: Vec<usize> = (0..train.len()).filter(|&i| train[i].label.task() == t).collect();
        let start = units.len();
        units.extend(build_units(&train, &members, cfg.seq_len));
        sets.push((start..units.len()).collect::<Vec<usize>>());
    }
    if units.is_empty() {
        return Err(HarnessError::Config {
            line: 0,
            message: "no training samples for the model's heads".into(),
        });
    }
    let partition = TaskPartition::aligned(sets, cfg.batch_size)?;
    let labels: Vec<_> = train.iter().map(|s| s.label.clone()).collect();
    let targets = build_targets(&labels, cfg.coupling, &table, cfg.reweight);
    let obj = ObjectiveConfig {
        weights: cfg.weights,
        coupling: cfg.coupling,
        table: &table,
        reweight: cfg.reweight,
    };

    let frozen = cfg.freeze_trunk && base.is_some();
    let trainable: Vec<bool> = model
        .params()
        .names()
        .map(|n| !frozen || Model::is_head_param(n))
        .collect();
    let mut adam = AdamState::new(cfg.lr);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let eval_tasks: Vec<Task> = tasks
        .iter()
        .copied()
        .filter(|&t| val.iter().any(|s| s.label.task() == t))
        .collect();

    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let batches = partition.epoch(cfg.seed, epoch as u64, cfg.shuffle);
        let mut totals = Vec::with_capacity(batches.len());
        let mut parts: [Vec<f64>; 6] = Default::default();
        for (iteration, per_set) in batches.iter().enumerate() {
            let chosen: Vec<&Unit> = per_set.iter().flatten().map(|&u| &units[u]).collect();
            let seqs: Vec<Vec<_>> = chosen
                .iter()
                .map(|u| {
                    let last = u.frames.iter().flatten().last().copied().expect("units are nonempty");
                    u.frames.iter().map(|f| frame_input(train[f.unwrap_or(last)])).collect()
                })
                .collect();
            let batch = SequenceBatch::from_sequences(&seqs)?;
            let mut rows = vec![FrameTargets::default(); batch.rows()];
            for (b, u) in chosen.iter().enumerate() {
                for (t, f) in u.frames.iter().enumerate() {
                    if let Some(i) = f {
                        rows[batch.row_index(b, t)] = targets[*i].clone();
                    }
                }
            }
            // CCC needs two frames; a lone VA frame is left out of this step
            let va_rows: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].va.is_some()).collect();
            if va_rows.len() == 1 {
                rows[va_rows[0]].va = None;
            }

            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let out = model.forward(&mut g, &bound, &batch, true, &mut dropout_rng)?;
            let p = &out.predictions;
            let outputs = [
                p.va,
                p.expr_logits,
                p.expr_probs,
                p.au_logits,
                p.au_probs,
                p.compound_logits,
            ];
            if outputs
                .iter()
                .flatten()
                .any(|&v| g.value(v).data().iter().any(|x| !x.is_finite()))
            {
                return Err(HarnessError::DivergedLoss {
                    epoch,
                    iteration,
                    detail: "non-finite model outputs".into(),
                });
            }
            let (loss, breakdown) = objective(&mut g, &out.predictions, &rows, &obj)?;
            if !breakdown.total.is_finite() {
                return Err(HarnessError::DivergedLoss {
                    epoch,
                    iteration,
                    detail: format!("{breakdown:?}"),
                });
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .vars()
                .iter()
                .zip(model.params().tensors())
                .map(|(v, t)| grads.get_or_zeros(*v, t))
                .collect();
            if grads.iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
                return Err(HarnessError::DivergedLoss {
                    epoch,
                    iteration,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step_masked(model.params_mut(), &grads, &trainable)?;
            totals.push(breakdown.total);
            for (acc, v) in parts.iter_mut().zip(breakdown_parts(&breakdown)) {
                acc.extend(v);
            }
        }
        let val_report = if eval_tasks.is_empty() {
            None
        } else {
            Some(evaluate(&model, &val, &eval_tasks, cfg.au_threshold)?)
        };
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr: adam.lr,
            iterations: totals.len(),
            loss: mean(&totals).unwrap_or(0.0),
            components: parts.map(|p| mean(&p)),
            val: val_report,
        });
    }
    Ok(TrainOutcome { model, epochs, loaded })
}

/// Resolve `cfg.data` and `cfg.init_from`, train, then write `cfg.out`
/// (checkpoint plus description) and `cfg.log` when set.
pub fn run_training(cfg: &RunConfig, config_dir: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
    cfg.check_paths()?;
    let data_dir = cfg.data.as_ref().ok_or_else(|| HarnessError::Config {
        line: 0,
        message: "`data` is required for training".into(),
    })?;
    let data = Dataset::read_dir(data_dir)?;
    let base = cfg.init_from.as_deref().map(load_model).transpose()?;
    let outcome = train(cfg, &data, base.as_ref(), config_dir)?;
    if let Some(out) = &cfg.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        save_model(&outcome.model, out)?;
    }
    if let Some(log) = &cfg.log {
        std::fs::write(log, outcome.log_csv()).map_err(|e| HarnessError::io(log, e))?;
    }
    Ok(outcome)
}

/// Describes the trunk of `model`, for diagnostics.
pub fn describe(model: &Model) -> String {
    let body = match &model.spec().body {
        Body::Trunk(_) => "trunk".to_string(),
        Body::Fused { members, mode, width } => format!("fused {} members ({}, {width})", members.len(), mode.as_str()),
    };
    format!("{body}, {} parameters", model.param_count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_dataset, SyntheticSpec, TaskCounts};
    use crate::losses::Coupling;

    fn tiny_data(seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            train: TaskCounts::new(20, 20, 20),
            val: TaskCounts::new(6, 6, 6),
            test: TaskCounts::default(),
            feature_dim: 8,
            ..SyntheticSpec::default()
        };
        generate_dataset(&spec, &RelatednessTable::cognitive(), seed).unwrap()
    }

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            backbone: vec![8],
            batch_size: 6,
            epochs: 1,
            lr: 1e-2,
            coupling: Coupling::SoftAndDistr,
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_epoch_writes_checkpoint_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        tiny_data(1).write_dir(&data_dir).unwrap();
        let cfg = RunConfig {
            data: Some(data_dir),
            out: Some(dir.path().join("m.afmt")),
            log: Some(dir.path().join("log.csv")),
            ..tiny_cfg()
        };
        let outcome = run_training(&cfg, None).unwrap();
        assert!(dir.path().join("m.afmt").exists());
        let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(log.lines().count(), 2);
        let reloaded = load_model(&dir.path().join("m.afmt")).unwrap();
        assert_eq!(reloaded, outcome.model);
        assert!(outcome.epochs[0].val.as_ref().unwrap().get("va.ccc_v").is_some());
    }

    #[test]
    fn same_seed_same_loss() {
        let data = tiny_data(2);
        let cfg = RunConfig {
            epochs: 2,
            dropout: 0.2,
            ..tiny_cfg()
        };
        let a = train(&cfg, &data, None, None).unwrap();
        let b = train(&cfg, &data, None, None).unwrap();
        assert_eq!(a.final_loss(), b.final_loss());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn loss_decreases_on_planted_data() {
        let data = tiny_data(3);
        let cfg = RunConfig {
            epochs: 30,
            ..tiny_cfg()
        };
        let out = train(&cfg, &data, None, None).unwrap();
        assert!(out.epochs[29].loss < out.epochs[0].loss);
    }

    #[test]
    fn recurrent_windows_with_padding() {
        let spec = SyntheticSpec {
            train: TaskCounts::new(14, 14, 14),
            val: TaskCounts::default(),
            test: TaskCounts::default(),
            feature_dim: 8,
            seq_len: 7,
            ..SyntheticSpec::default()
        };
        let data = generate_dataset(&spec, &RelatednessTable::cognitive(), 4).unwrap();
        let cfg = RunConfig {
            recurrent: "single:4x1".parse().unwrap(),
            seq_len: 3,
            batch_size: 3,
            ..tiny_cfg()
        };
        let out = train(&cfg, &data, None, None).unwrap();
        // 2 sequences of 7 frames per task give 3 windows each, 6 windows per task
        assert_eq!(out.epochs[0].iterations, 6);
    }

    #[test]
    fn frozen_trunk_keeps_base_weights() {
        let data = tiny_data(5);
        let base = train(&tiny_cfg(), &data, None, None).unwrap().model;
        let cfg = RunConfig {
            heads: vec![Head::Expr],
            freeze_trunk: true,
            ..tiny_cfg()
        };
        let out = train(&cfg, &data, Some(&base), None).unwrap();
        assert_eq!(out.model.params().get("trunk.bb0.w"), base.params().get("trunk.bb0.w"));
        assert!(out.loaded.contains(&"head.expr.w".to_string()));
        assert_ne!(out.model.params().get("head.expr.w"), base.params().get("head.expr.w"));
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data(6);
        let cfg = RunConfig {
            lr: 1e300,
            epochs: 3,
            ..tiny_cfg()
        };
        let r = train(&cfg, &data, None, None);
        assert!(matches!(r, Err(HarnessError::DivergedLoss { .. })), "{r:?}");
    }
}
