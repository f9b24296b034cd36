//! Synthetic datasets with a planted emotion ↔ AU structure.
//!
//! Every sample (or every sequence, when `seq_len > 1`) draws a latent
//! emotion uniformly from the seven classes. Features are the emotion's
//! embedding (`signal` on every coordinate `j` with `j mod 7 = e`) plus
//! Gaussian noise of standard deviation `sigma`. Labels:
//!
//! * EXPR: the latent emotion.
//! * AU: the emotion's relatedness row, prototypical AUs always on and
//!   observational AUs on with probability `w`; with probability `1 − kappa`
//!   the whole pattern is inverted. Neutral has an empty row.
//! * VA: the emotion's mean point plus noise of deviation `sigma`, clipped.
//! * COMPOUND: a class of the default compound list; features are the mean
//!   of the two constituents' embeddings plus noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{parse_pairs, parse_value};
use super::dataset::Dataset;
use super::HarnessError;
use crate::affect_types::{
    AUVector, AnnotatedSample, ExpressionLabel, Label, Split, Task, ValenceArousal, NUM_AUS, NUM_EXPRESSIONS,
};
use crate::relatedness::RelatednessTable;
use crate::zeroshot::default_compound_defs;

/// Samples per task set, in the order VA, EXPR, AU, COMPOUND.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TaskCounts {
    pub va: usize,
    pub expr: usize,
    pub au: usize,
    pub compound: usize,
}

impl TaskCounts {
    pub fn new(va: usize, expr: usize, au: usize) -> Self {
        Self {
            va,
            expr,
            au,
            compound: 0,
        }
    }

    fn of(&self, task: Task) -> usize {
        match task {
            Task::Va => self.va,
            Task::Expr => self.expr,
            Task::Au => self.au,
            Task::Compound => self.compound,
        }
    }

    fn set(&mut self, task: Task, n: usize) {
        match task {
            Task::Va => self.va = n,
            Task::Expr => self.expr = n,
            Task::Au => self.au = n,
            Task::Compound => self.compound = n,
        }
    }
}

/// Mean valence/arousal per emotion, indexed like [`ExpressionLabel`].
pub const DEFAULT_VA_MEANS: [[f64; 2]; NUM_EXPRESSIONS] = [
    [0.0, 0.0],
    [-0.5, 0.6],
    [-0.6, 0.3],
    [-0.6, 0.6],
    [0.7, 0.5],
    [-0.6, -0.4],
    [0.3, 0.7],
];

const TASKS: [Task; 4] = [Task::Va, Task::Expr, Task::Au, Task::Compound];
const SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train: TaskCounts,
    pub val: TaskCounts,
    pub test: TaskCounts,
    pub feature_dim: usize,
    pub sigma: f64,
    pub kappa: f64,
    /// Embedding magnitude.
    pub signal: f64,
    /// Frames per sequence; 1 gives independent frames.
    pub seq_len: usize,
    pub va_means: [[f64; 2]; NUM_EXPRESSIONS],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train: TaskCounts::new(600, 600, 600),
            val: TaskCounts::new(100, 100, 100),
            test: TaskCounts::new(200, 200, 200),
            feature_dim: 16,
            sigma: 0.2,
            kappa: 0.9,
            signal: 1.0,
            seq_len: 1,
            va_means: DEFAULT_VA_MEANS,
        }
    }
}

fn counts_key(split: Split, task: Task) -> String {
    format!("{}.{}", split.as_str(), task.as_str().to_ascii_lowercase())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| {
            Err(HarnessError::Config {
                line: 0,
                message: m.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad("kappa must lie in [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be a finite nonnegative number");
        }
        if self.feature_dim < NUM_EXPRESSIONS {
            return bad("feature_dim must be at least 7");
        }
        if self.seq_len == 0 {
            return bad("seq_len must be positive");
        }
        if self.va_means.iter().flatten().any(|m| !(-1.0..=1.0).contains(m)) {
            return bad("VA means must lie in [-1, 1]");
        }
        Ok(())
    }

    fn counts(&self, split: Split) -> &TaskCounts {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn counts_mut(&mut self, split: Split) -> &mut TaskCounts {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Keys: `train.va`, `val.expr`, `test.au`, `train.compound`, …,
    /// `feature_dim`, `sigma`, `kappa`, `signal`, `seq_len` and
    /// `va_mean.<emotion> = v;a`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut s = Self::default();
        'lines: for (line, key, v) in parse_pairs(text)? {
            for split in SPLITS {
                for task in TASKS {
                    if key == counts_key(split, task) {
                        s.counts_mut(split).set(task, parse_value(line, &key, &v)?);
                        continue 'lines;
                    }
                }
            }
            match key.as_str() {
                "feature_dim" => s.feature_dim = parse_value(line, &key, &v)?,
                "sigma" => s.sigma = parse_value(line, &key, &v)?,
                "kappa" => s.kappa = parse_value(line, &key, &v)?,
                "signal" => s.signal = parse_value(line, &key, &v)?,
                "seq_len" => s.seq_len = parse_value(line, &key, &v)?,
                k if k.starts_with("va_mean.") => {
                    let bad = || HarnessError::Config {
                        line,
                        message: format!("bad VA mean {key} = {v}"),
                    };
                    let e = ExpressionLabel::from_name(&k["va_mean.".len()..]).map_err(|_| bad())?;
                    let (a, b) = v.split_once(';').ok_or_else(bad)?;
                    s.va_means[e.index()] = [
                        a.trim().parse().map_err(|_| bad())?,
                        b.trim().parse().map_err(|_| bad())?,
                    ];
                }
                _ => {
                    return Err(HarnessError::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for split in SPLITS {
            for task in TASKS {
                let _ = writeln!(out, "{} = {}", counts_key(split, task), self.counts(split).of(task));
            }
        }
        let _ = writeln!(out, "feature_dim = {}", self.feature_dim);
        let _ = writeln!(out, "sigma = {}", self.sigma);
        let _ = writeln!(out, "kappa = {}", self.kappa);
        let _ = writeln!(out, "signal = {}", self.signal);
        let _ = writeln!(out, "seq_len = {}", self.seq_len);
        for e in ExpressionLabel::all() {
            let [v, a] = self.va_means[e.index()];
            let _ = writeln!(out, "va_mean.{} = {v};{a}", e.name());
        }
        out
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    table: &'a RelatednessTable,
    compounds: Vec<(ExpressionLabel, ExpressionLabel)>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Generator<'_> {
    fn embedding(&self, e: usize) -> Vec<f64> {
        (0..self.spec.feature_dim)
            .map(|j| {
                if j % NUM_EXPRESSIONS == e {
                    self.spec.signal
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn features(&mut self, base: &[f64]) -> Vec<f64> {
        base.iter().map(|&b| b + self.noise.sample(&mut self.rng)).collect()
    }

    fn au_pattern(&mut self, e: ExpressionLabel) -> AUVector {
        let mut active = [false; NUM_AUS];
        if let Some(row) = self.table.row(e) {
            for (au, w) in row.weighted_aus() {
                let i = crate::affect_types::au_index(au).expect("table AUs are valid");
                active[i] = w >= 1.0 || self.rng.random_bool(w.clamp(0.0, 1.0));
            }
        }
        if !self.rng.random_bool(self.spec.kappa) {
            for a in &mut active {
                *a = !*a;
            }
        }
        AUVector {
            values: active,
            mask: [true; NUM_AUS],
        }
    }

    fn va(&mut self, e: usize) -> ValenceArousal {
        let [mv, ma] = self.spec.va_means[e];
        let v = (mv + self.noise.sample(&mut self.rng)).clamp(-1.0, 1.0);
        let a = (ma + self.noise.sample(&mut self.rng)).clamp(-1.0, 1.0);
        ValenceArousal::new(v, a).expect("clipped")
    }

    fn run(mut self) -> Vec<AnnotatedSample> {
        let mut out = Vec::new();
        let t = self.spec.seq_len;
        for split in SPLITS {
            for task in TASKS {
                let n = self.spec.counts(split).of(task);
                let tag = task.as_str().to_ascii_lowercase();
                for start in (0..n).step_by(t) {
                    let frames = t.min(n - start);
                    let (base, latent) = match task {
                        Task::Compound => {
                            let c = self.rng.random_range(0..self.compounds.len());
                            let (a, b) = self.compounds[c];
                            let (ea, eb) = (self.embedding(a.index()), self.embedding(b.index()));
                            (ea.iter().zip(&eb).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>(), c)
                        }
                        _ => {
                            let e = self.rng.random_range(0..NUM_EXPRESSIONS);
                            (self.embedding(e), e)
                        }
                    };
                    let seq = (t > 1).then(|| format!("{}-{tag}-s{:05}", split.as_str(), start / t));
                    for f in 0..frames {
                        let features = self.features(&base);
                        let e = ExpressionLabel::new(latent.min(NUM_EXPRESSIONS - 1)).expect("class");
                        let label = match task {
                            Task::Va => Label::Va(self.va(latent)),
                            Task::Expr => Label::Expr(e),
                            Task::Au => Label::Au(self.au_pattern(e)),
                            Task::Compound => Label::Compound(latent),
                        };
                        out.push(AnnotatedSample {
                            id: format!("{}-{tag}-{:05}", split.as_str(), start + f),
                            split,
                            sequence_id: seq.clone(),
                            utterance_id: None,
                            frame_index: seq.as_ref().map(|_| f),
                            features,
                            audio_features: None,
                            landmarks: None,
                            label,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Deterministic in `(spec, seed)`.
pub fn generate_dataset(spec: &SyntheticSpec, table: &RelatednessTable, seed: u64) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    let compounds = default_compound_defs(table).iter().map(|d| (d.emo1, d.emo2)).collect();
    let g = Generator {
        spec,
        table,
        compounds,
        rng: ChaCha8Rng::seed_from_u64(seed),
        noise: Normal::new(0.0, spec.sigma).expect("sigma validated"),
    };
    Ok(Dataset::new(g.run()))
}
