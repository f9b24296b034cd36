//! Flat `key = value` run configuration and the textual model description
//! stored next to checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::HarnessError;
use crate::fusion::model_level_fuse_spec;
use crate::losses::{Coupling, LossWeights};
use crate::models::{Body, FusionMode, Head, ModelDims, ModelSpec, Recurrent, TrunkSpec};
use crate::relatedness::RelatednessTable;

#[derive(Debug, Clone, PartialEq)]
pub enum RelatednessChoice {
    Cognitive,
    Empirical,
    File(PathBuf),
}

impl RelatednessChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "cognitive" => Some(Self::Cognitive),
            "empirical" => Some(Self::Empirical),
            other => other.strip_prefix("file:").map(|p| Self::File(PathBuf::from(p.trim()))),
        }
    }

    pub fn load(&self) -> Result<RelatednessTable, HarnessError> {
        Ok(match self {
            Self::Cognitive => RelatednessTable::cognitive(),
            Self::Empirical => RelatednessTable::empirical(),
            Self::File(p) => RelatednessTable::load(p)?,
        })
    }
}

impl std::fmt::Display for RelatednessChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Cognitive => write!(f, "cognitive"),
            Self::Empirical => write!(f, "empirical"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Everything one training or evaluation run needs.
///
/// Keys (defaults in brackets):
///
/// | key | meaning |
/// |---|---|
/// | `seed` | RNG seed [0] |
/// | `backbone` | comma-separated layer widths [64] |
/// | `taps` | backbone layers feeding the recurrent part [last] |
/// | `recurrent` | `none`, `single:HxL` or `per_tap:HxL` [none] |
/// | `streams` | 1 visual, 2 visual + audio [1] |
/// | `landmark_concat` | append landmark vectors [false] |
/// | `dropout` | drop probability before the recurrent part [0] |
/// | `heads` | `va,expr,au` and/or `compound:K` [va,expr,au] |
/// | `fusion.members` | comma-separated member config files [empty] |
/// | `fusion.mode` | `rnn` or `fc` [rnn] |
/// | `fusion.width` | fusion layer width [16] |
/// | `lambda1`, `lambda2` | AU and VA loss weights [1, 1] |
/// | `coupling` | `none`, `coannotation`, `soft_coannotation`, `distr_matching`, `soft+distr` [none] |
/// | `relatedness` | `cognitive`, `empirical` or `file:PATH` [cognitive] |
/// | `reweight` | use observational AU weights [true] |
/// | `lr`, `lr_decay` | Adam step size and per-epoch factor [1e-4, 1] |
/// | `batch_size` | sequences per concatenated batch [10] |
/// | `seq_len` | frames per training sequence [1] |
/// | `epochs` | [10] |
/// | `shuffle` | reshuffle every epoch [true] |
/// | `data`, `out`, `log`, `init_from` | paths [unset] |
/// | `freeze_trunk` | with `init_from`, train only heads [false] |
/// | `au_threshold` | AU binarisation threshold for evaluation [0.5] |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub backbone: Vec<usize>,
    pub taps: Option<Vec<usize>>,
    pub recurrent: Recurrent,
    pub streams: usize,
    pub landmark_concat: bool,
    pub dropout: f64,
    pub heads: Vec<Head>,
    pub fusion_members: Vec<PathBuf>,
    pub fusion_mode: FusionMode,
    pub fusion_width: usize,
    pub weights: LossWeights,
    pub coupling: Coupling,
    pub relatedness: RelatednessChoice,
    pub reweight: bool,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub shuffle: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
    pub freeze_trunk: bool,
    pub au_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backbone: vec![64],
            taps: None,
            recurrent: Recurrent::None,
            streams: 1,
            landmark_concat: false,
            dropout: 0.0,
            heads: vec![Head::Va, Head::Expr, Head::Au],
            fusion_members: Vec::new(),
            fusion_mode: FusionMode::Rnn,
            fusion_width: 16,
            weights: LossWeights::default(),
            coupling: Coupling::None,
            relatedness: RelatednessChoice::Cognitive,
            reweight: true,
            lr: 1e-4,
            lr_decay: 1.0,
            batch_size: 10,
            seq_len: 1,
            epochs: 10,
            shuffle: true,
            data: None,
            out: None,
            log: None,
            init_from: None,
            freeze_trunk: false,
            au_threshold: 0.5,
        }
    }
}

/// `key = value` pairs with line numbers; `#` starts a comment.
pub(crate) fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Config {
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config {
        line,
        message: format!("bad value {v:?} for {key}"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config {
            line,
            message: format!("bad boolean {v:?} for {key}"),
        }),
    }
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>, HarnessError> {
    v.split(',').map(|s| parse_value(line, key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_heads(v: &str) -> Option<Vec<Head>> {
    v.split(',')
        .map(|h| match h.trim() {
            "va" => Some(Head::Va),
            "expr" => Some(Head::Expr),
            "au" => Some(Head::Au),
            other => other.strip_prefix("compound:")?.parse().ok().map(Head::Compound),
        })
        .collect()
}

pub fn format_heads(heads: &[Head]) -> String {
    heads
        .iter()
        .map(|h| match h {
            Head::Va => "va".to_string(),
            Head::Expr => "expr".to_string(),
            Head::Au => "au".to_string(),
            Head::Compound(k) => format!("compound:{k}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut c = Self::default();
        let mut l1 = c.weights.lambda1;
        let mut l2 = c.weights.lambda2;
        for (line, key, v) in parse_pairs(text)? {
            let bad = |message: String| HarnessError::Config { line, message };
            let v = v.as_str();
            match key.as_str() {
                "seed" => c.seed = parse_value(line, &key, v)?,
                "backbone" => c.backbone = parse_list(line, &key, v)?,
                "taps" => c.taps = Some(parse_list(line, &key, v)?),
                "recurrent" => c.recurrent = v.parse().map_err(|e| bad(format!("{e}")))?,
                "streams" => c.streams = parse_value(line, &key, v)?,
                "landmark_concat" => c.landmark_concat = parse_bool(line, &key, v)?,
                "dropout" => c.dropout = parse_value(line, &key, v)?,
                "heads" => c.heads = parse_heads(v).ok_or_else(|| bad(format!("bad heads {v:?}")))?,
                "fusion.members" => {
                    c.fusion_members = v
                        .split(',')
                        .map(|p| PathBuf::from(p.trim()))
                        .filter(|p| !p.as_os_str().is_empty())
                        .collect()
                }
                "fusion.mode" => {
                    c.fusion_mode = FusionMode::parse(v).ok_or_else(|| bad(format!("bad fusion mode {v:?}")))?
                }
                "fusion.width" => c.fusion_width = parse_value(line, &key, v)?,
                "lambda1" => l1 = parse_value(line, &key, v)?,
                "lambda2" => l2 = parse_value(line, &key, v)?,
                "coupling" => c.coupling = Coupling::parse(v).ok_or_else(|| bad(format!("bad coupling {v:?}")))?,
                "relatedness" => {
                    c.relatedness = RelatednessChoice::parse(v).ok_or_else(|| bad(format!("bad relatedness {v:?}")))?
                }
                "reweight" => c.reweight = parse_bool(line, &key, v)?,
                "lr" => c.lr = parse_value(line, &key, v)?,
                "lr_decay" => c.lr_decay = parse_value(line, &key, v)?,
                "batch_size" => c.batch_size = parse_value(line, &key, v)?,
                "seq_len" => c.seq_len = parse_value(line, &key, v)?,
                "epochs" => c.epochs = parse_value(line, &key, v)?,
                "shuffle" => c.shuffle = parse_bool(line, &key, v)?,
                "data" => c.data = Some(PathBuf::from(v)),
                "out" => c.out = Some(PathBuf::from(v)),
                "log" => c.log = Some(PathBuf::from(v)),
                "init_from" => c.init_from = Some(PathBuf::from(v)),
                "freeze_trunk" => c.freeze_trunk = parse_bool(line, &key, v)?,
                "au_threshold" => c.au_threshold = parse_value(line, &key, v)?,
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        c.weights = LossWeights::new(l1, l2).map_err(|e| HarnessError::Config {
            line: 0,
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Range checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| {
            Err(HarnessError::Config {
                line: 0,
                message: m.to_string(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch_size and seq_len must be positive");
        }
        if !(0.0..=1.0).contains(&self.au_threshold) {
            return bad("au_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Every referenced input path must exist.
    pub fn check_paths(&self) -> Result<(), HarnessError> {
        let mut paths: Vec<&Path> = self.fusion_members.iter().map(PathBuf::as_path).collect();
        paths.extend(self.data.as_deref());
        paths.extend(self.init_from.as_deref());
        if let RelatednessChoice::File(p) = &self.relatedness {
            paths.push(p);
        }
        for p in paths {
            if !p.exists() {
                return Err(HarnessError::Config {
                    line: 0,
                    message: format!("path {} does not exist", p.display()),
                });
            }
        }
        Ok(())
    }

    pub fn trunk(&self) -> TrunkSpec {
        TrunkSpec {
            taps: self
                .taps
                .clone()
                .unwrap_or_else(|| vec![self.backbone.len().saturating_sub(1)]),
            recurrent: self.recurrent,
            streams: self.streams,
            landmark_concat: self.landmark_concat,
            dropout: self.dropout,
            ..TrunkSpec::dense(self.backbone.clone())
        }
    }

    /// The configured model; fused when `fusion.members` is set, in which
    /// case member files are resolved relative to `base`.
    pub fn model_spec(&self, base: Option<&Path>) -> Result<ModelSpec, HarnessError> {
        if self.fusion_members.is_empty() {
            let spec = ModelSpec::new(self.trunk(), self.heads.clone());
            spec.validate()?;
            return Ok(spec);
        }
        let mut members = Vec::with_capacity(self.fusion_members.len());
        for p in &self.fusion_members {
            let p = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            let m = Self::load(&p)?;
            members.push(ModelSpec::new(m.trunk(), self.heads.clone()));
        }
        Ok(model_level_fuse_spec(&members, self.fusion_mode, self.fusion_width)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("backbone", join(&self.backbone));
        if let Some(t) = &self.taps {
            kv("taps", join(t));
        }
        kv("recurrent", self.recurrent.to_string());
        kv("streams", self.streams.to_string());
        kv("landmark_concat", self.landmark_concat.to_string());
        kv("dropout", self.dropout.to_string());
        kv("heads", format_heads(&self.heads));
        if !self.fusion_members.is_empty() {
            let m: Vec<String> = self.fusion_members.iter().map(|p| p.display().to_string()).collect();
            kv("fusion.members", m.join(","));
        }
        kv("fusion.mode", self.fusion_mode.as_str().to_string());
        kv("fusion.width", self.fusion_width.to_string());
        kv("lambda1", self.weights.lambda1.to_string());
        kv("lambda2", self.weights.lambda2.to_string());
        kv("coupling", self.coupling.as_str().to_string());
        kv("relatedness", self.relatedness.to_string());
        kv("reweight", self.reweight.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seq_len", self.seq_len.to_string());
        kv("epochs", self.epochs.to_string());
        kv("shuffle", self.shuffle.to_string());
        for (k, p) in [
            ("data", &self.data),
            ("out", &self.out),
            ("log", &self.log),
            ("init_from", &self.init_from),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("freeze_trunk", self.freeze_trunk.to_string());
        kv("au_threshold", self.au_threshold.to_string());
        s
    }
}

/// One-line trunk form:
/// `backbone=64,32;taps=0,1;recurrent=single:16x1;streams=1;landmarks=false;dropout=0`.
pub fn format_trunk(t: &TrunkSpec) -> String {
    format!(
        "backbone={};taps={};recurrent={};streams={};landmarks={};dropout={}",
        join(&t.backbone),
        join(&t.taps),
        t.recurrent,
        t.streams,
        t.landmark_concat,
        t.dropout
    )
}

pub fn parse_trunk(s: &str) -> Option<TrunkSpec> {
    let mut t = TrunkSpec::dense(vec![1]);
    for part in s.split(';') {
        let (k, v) = part.split_once('=')?;
        let v = v.trim();
        let list = || {
            v.split(',')
                .map(|x| x.trim().parse().ok())
                .collect::<Option<Vec<usize>>>()
        };
        match k.trim() {
            "backbone" => t.backbone = list()?,
            "taps" => t.taps = list()?,
            "recurrent" => t.recurrent = v.parse().ok()?,
            "streams" => t.streams = v.parse().ok()?,
            "landmarks" => t.landmark_concat = v.parse().ok()?,
            "dropout" => t.dropout = v.parse().ok()?,
            _ => return None,
        }
    }
    Some(t)
}

/// Model description written next to a checkpoint.
pub fn model_to_text(spec: &ModelSpec, dims: &ModelDims) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "feature_dim = {}", dims.feature_dim);
    let _ = writeln!(s, "audio_dim = {}", dims.audio_dim);
    let _ = writeln!(s, "landmark_dim = {}", dims.landmark_dim);
    let _ = writeln!(s, "heads = {}", format_heads(&spec.heads));
    match &spec.body {
        Body::Trunk(t) => {
            let _ = writeln!(s, "trunk = {}", format_trunk(t));
        }
        Body::Fused { members, mode, width } => {
            for m in members {
                let _ = writeln!(s, "member = {}", format_trunk(m));
            }
            let _ = writeln!(s, "fusion = {}:{width}", mode.as_str());
        }
    }
    s
}

pub fn model_from_text(text: &str) -> Result<(ModelSpec, ModelDims), HarnessError> {
    let mut dims = ModelDims::default();
    let mut heads = None;
    let mut trunk = None;
    let mut members = Vec::new();
    let mut fusion = None;
    for (line, key, v) in parse_pairs(text)? {
        let bad = || HarnessError::Config {
            line,
            message: format!("bad model line {key} = {v}"),
        };
        match key.as_str() {
            "feature_dim" => dims.feature_dim = parse_value(line, &key, &v)?,
            "audio_dim" => dims.audio_dim = parse_value(line, &key, &v)?,
            "landmark_dim" => dims.landmark_dim = parse_value(line, &key, &v)?,
            "heads" => heads = Some(parse_heads(&v).ok_or_else(bad)?),
            "trunk" => trunk = Some(parse_trunk(&v).ok_or_else(bad)?),
            "member" => members.push(parse_trunk(&v).ok_or_else(bad)?),
            "fusion" => {
                let (m, w) = v.split_once(':').ok_or_else(bad)?;
                fusion = Some((
                    FusionMode::parse(m).ok_or_else(bad)?,
                    w.trim().parse().map_err(|_| bad())?,
                ));
            }
            _ => return Err(bad()),
        }
    }
    let missing = |what: &str| HarnessError::Config {
        line: 0,
        message: format!("model description lacks {what}"),
    };
    let heads = heads.ok_or_else(|| missing("heads"))?;
    let body = match (trunk, fusion) {
        (Some(t), None) if members.is_empty() => Body::Trunk(t),
        (None, Some((mode, width))) if !members.is_empty() => Body::Fused { members, mode, width },
        _ => return Err(missing("exactly one trunk or a member list with fusion")),
    };
    let spec = ModelSpec { body, heads };
    spec.validate()?;
    Ok((spec, dims))
}
