//! Declarative model builders at desk scale.
//!
//! A model is a trunk (dense backbone with feature taps, optional audio
//! stream and landmark concatenation, optional GRU stacks) or a fused
//! composite of several trunks, topped by per-task output heads.
//!
//! Frames of a [`SequenceBatch`] are stored time-major: the frame of
//! sequence `b` at step `t` is row `t·B + b`.

use std::collections::HashMap;
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::affect_types::{NUM_AUS, NUM_EXPRESSIONS};
use crate::autodiff::{
    dense, dropout, gru_step, init_params, AutodiffError, Graph, GruCell, GruVars, ParamDecl, ParamSet, Tensor, Var,
};
use crate::losses::BatchPredictions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("parameter {0:?} missing or misshapen")]
    BadParams(String),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recurrent {
    None,
    /// Tap features are concatenated and fed to one GRU stack.
    Single {
        hidden: usize,
        layers: usize,
    },
    /// One GRU stack per tap; branch outputs are concatenated.
    PerTap {
        hidden: usize,
        layers: usize,
    },
}

impl fmt::Display for Recurrent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recurrent::None => write!(f, "none"),
            Recurrent::Single { hidden, layers } => write!(f, "single:{hidden}x{layers}"),
            Recurrent::PerTap { hidden, layers } => write!(f, "per_tap:{hidden}x{layers}"),
        }
    }
}

impl std::str::FromStr for Recurrent {
    type Err = ModelError;

    /// `none`, `single:HxL` or `per_tap:HxL`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidSpec(format!("recurrent {s:?}"));
        let s = s.trim();
        if s == "none" {
            return Ok(Recurrent::None);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (h, l) = rest.split_once('x').ok_or_else(bad)?;
        let hidden = h.trim().parse().map_err(|_| bad())?;
        let layers = l.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "single" => Ok(Recurrent::Single { hidden, layers }),
            "per_tap" => Ok(Recurrent::PerTap { hidden, layers }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Va,
    Expr,
    Au,
    Compound(usize),
}

impl Head {
    pub fn width(self) -> usize {
        match self {
            Head::Va => 2,
            Head::Expr => NUM_EXPRESSIONS,
            Head::Au => NUM_AUS,
            Head::Compound(k) => k,
        }
    }

    fn key(self) -> &'static str {
        match self {
            Head::Va => "va",
            Head::Expr => "expr",
            Head::Au => "au",
            Head::Compound(_) => "compound",
        }
    }
}

/// Feature extractor up to (and including) the recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkSpec {
    pub backbone: Vec<usize>,
    pub taps: Vec<usize>,
    pub recurrent: Recurrent,
    /// 1 (visual) or 2 (visual + audio).
    pub streams: usize,
    pub landmark_concat: bool,
    /// Drop probability on the input of the first recurrent layer.
    pub dropout: f64,
}

impl TrunkSpec {
    pub fn dense(backbone: Vec<usize>) -> Self {
        let last = backbone.len().saturating_sub(1);
        Self {
            backbone,
            taps: vec![last],
            recurrent: Recurrent::None,
            streams: 1,
            landmark_concat: false,
            dropout: 0.0,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.backbone.is_empty() || self.backbone.contains(&0) {
            return bad("backbone needs at least one layer of nonzero width");
        }
        if self.taps.is_empty() {
            return bad("at least one tap is required");
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("taps must be strictly increasing");
        }
        if self.taps.iter().any(|&t| t >= self.backbone.len()) {
            return bad("tap index beyond backbone");
        }
        match self.recurrent {
            Recurrent::None => {}
            Recurrent::Single { hidden, layers } | Recurrent::PerTap { hidden, layers } => {
                if hidden == 0 || layers == 0 {
                    return bad("recurrent hidden size and depth must be positive");
                }
            }
        }
        if matches!(self.recurrent, Recurrent::PerTap { .. }) && self.taps.len() < 2 {
            return bad("per_tap needs at least two taps");
        }
        if !(1..=2).contains(&self.streams) {
            return bad("streams must be 1 or 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Rnn,
    Fc,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "rnn" => Some(FusionMode::Rnn),
            "fc" => Some(FusionMode::Fc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Rnn => "rnn",
            FusionMode::Fc => "fc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Trunk(TrunkSpec),
    /// Member trunks whose outputs are concatenated into one fusion trunk
    /// (a GRU layer or a dense ReLU layer of `width` units).
    Fused {
        members: Vec<TrunkSpec>,
        mode: FusionMode,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub body: Body,
    pub heads: Vec<Head>,
}

impl ModelSpec {
    pub fn new(trunk: TrunkSpec, heads: Vec<Head>) -> Self {
        Self {
            body: Body::Trunk(trunk),
            heads,
        }
    }

    pub fn has_head(&self, head: Head) -> bool {
        self.heads.iter().any(|h| h.key() == head.key())
    }

    pub fn compound_classes(&self) -> Option<usize> {
        self.heads.iter().find_map(|h| match h {
            Head::Compound(k) => Some(*k),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads.is_empty() {
            return Err(ModelError::InvalidSpec("no output heads".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if self.heads[..i].iter().any(|o| o.key() == h.key()) {
                return Err(ModelError::InvalidSpec(format!("duplicate head {}", h.key())));
            }
            if *h == Head::Compound(0) {
                return Err(ModelError::InvalidSpec("compound head needs classes".into()));
            }
        }
        match &self.body {
            Body::Trunk(t) => t.validate(),
            Body::Fused { members, width, .. } => {
                if members.is_empty() {
                    return Err(ModelError::InvalidSpec("fusion needs at least one member".into()));
                }
                if *width == 0 {
                    return Err(ModelError::InvalidSpec("fusion width must be positive".into()));
                }
                members.iter().try_for_each(TrunkSpec::validate)
            }
        }
    }

    fn trunks(&self) -> Vec<&TrunkSpec> {
        match &self.body {
            Body::Trunk(t) => vec![t],
            Body::Fused { members, .. } => members.iter().collect(),
        }
    }

    pub fn needs_audio(&self) -> bool {
        self.trunks().iter().any(|t| t.streams == 2)
    }

    pub fn needs_landmarks(&self) -> bool {
        self.trunks().iter().any(|t| t.landmark_concat)
    }
}

/// Input widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub audio_dim: usize,
    pub landmark_dim: usize,
}

impl ModelDims {
    pub fn visual(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameInput {
    pub features: Vec<f64>,
    pub audio: Option<Vec<f64>>,
    pub landmarks: Option<Vec<f64>>,
}

impl FrameInput {
    pub fn visual(features: Vec<f64>) -> Self {
        Self {
            features,
            ..Default::default()
        }
    }
}

/// `B` sequences of `T` frames each, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub steps: usize,
    pub features: Tensor,
    pub audio: Option<Tensor>,
    pub landmarks: Option<Tensor>,
}

impl SequenceBatch {
    pub fn from_sequences(seqs: &[Vec<FrameInput>]) -> Result<Self, ModelError> {
        let batch = seqs.len();
        let steps = seqs.first().map_or(0, Vec::len);
        if batch == 0 || steps == 0 {
            return Err(ModelError::EmptySequence);
        }
        if let Some(s) = seqs.iter().find(|s| s.len() != steps) {
            return Err(ModelError::ShapeMismatch {
                what: "sequence length",
                expected: steps,
                got: s.len(),
            });
        }
        let frame = |row: usize| &seqs[row % batch][row / batch];
        let gather = |what: &'static str,
                      pick: &dyn Fn(&FrameInput) -> Option<&Vec<f64>>|
         -> Result<Option<Tensor>, ModelError> {
            let Some(first) = pick(frame(0)) else {
                if (0..batch * steps).any(|r| pick(frame(r)).is_some()) {
                    return Err(ModelError::ShapeMismatch {
                        what,
                        expected: 0,
                        got: 1,
                    });
                }
                return Ok(None);
            };
            let width = first.len();
            let mut data = Vec::with_capacity(batch * steps * width);
            for r in 0..batch * steps {
                let v = pick(frame(r)).ok_or(ModelError::ShapeMismatch {
                    what,
                    expected: width,
                    got: 0,
                })?;
                if v.len() != width {
                    return Err(ModelError::ShapeMismatch {
                        what,
                        expected: width,
                        got: v.len(),
                    });
                }
                data.extend_from_slice(v);
            }
            Ok(Some(Tensor::matrix(batch * steps, width, data)))
        };
        let features = gather("features", &|f| Some(&f.features))?.expect("always present");
        Ok(Self {
            batch,
            steps,
            features,
            audio: gather("audio", &|f| f.audio.as_ref())?,
            landmarks: gather("landmarks", &|f| f.landmarks.as_ref())?,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.steps
    }

    pub fn row_index(&self, seq: usize, step: usize) -> usize {
        step * self.batch + seq
    }
}

/// Numeric per-frame outputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameOutput {
    pub va: Option<[f64; 2]>,
    pub expr: Option<[f64; NUM_EXPRESSIONS]>,
    pub au: Option<[f64; NUM_AUS]>,
    pub compound: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrediction {
    pub frames: Vec<FrameOutput>,
    /// Per-dimension median of the frame VA predictions, when a VA head exists.
    pub median_va: Option<[f64; 2]>,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Graph handles of a model's parameters for one step.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }

    fn gru(&self, prefix: &str) -> GruVars {
        GruVars {
            w_update: self.get(&format!("{prefix}.wz")),
            b_update: self.get(&format!("{prefix}.bz")),
            w_reset: self.get(&format!("{prefix}.wr")),
            b_reset: self.get(&format!("{prefix}.br")),
            w_candidate: self.get(&format!("{prefix}.wh")),
            b_candidate: self.get(&format!("{prefix}.bh")),
        }
    }
}

/// Graph-level model outputs.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    pub features: Var,
    pub predictions: BatchPredictions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    dims: ModelDims,
    params: ParamSet,
}

fn dense_decls(decls: &mut Vec<ParamDecl>, prefix: &str, fan_in: usize, fan_out: usize) {
    decls.push(ParamDecl::weight(format!("{prefix}.w"), fan_in, fan_out));
    decls.push(ParamDecl::bias(format!("{prefix}.b"), fan_out));
}

fn gru_decls(decls: &mut Vec<ParamDecl>, prefix: &str, input: usize, hidden: usize) {
    for gate in ["z", "r", "h"] {
        decls.push(ParamDecl::weight(format!("{prefix}.w{gate}"), input + hidden, hidden));
        decls.push(ParamDecl::bias(format!("{prefix}.b{gate}"), hidden));
    }
}

fn gru_stack_decls(decls: &mut Vec<ParamDecl>, prefix: &str, input: usize, hidden: usize, layers: usize) {
    for l in 0..layers {
        gru_decls(
            decls,
            &format!("{prefix}.gru{l}"),
            if l == 0 { input } else { hidden },
            hidden,
        );
    }
}

fn trunk_decls(decls: &mut Vec<ParamDecl>, prefix: &str, t: &TrunkSpec, dims: &ModelDims) -> usize {
    let mut width = dims.feature_dim;
    for (l, &w) in t.backbone.iter().enumerate() {
        dense_decls(decls, &format!("{prefix}.bb{l}"), width, w);
        width = w;
    }
    let mut aux = 0;
    if t.streams == 2 {
        let mut width = dims.audio_dim;
        for (l, &w) in t.backbone.iter().enumerate() {
            dense_decls(decls, &format!("{prefix}.audio{l}"), width, w);
            width = w;
        }
        aux += width;
    }
    if t.landmark_concat {
        aux += dims.landmark_dim;
    }
    let tap_widths: Vec<usize> = t.taps.iter().map(|&i| t.backbone[i]).collect();
    match t.recurrent {
        Recurrent::None => tap_widths.iter().sum::<usize>() + aux,
        Recurrent::Single { hidden, layers } => {
            gru_stack_decls(
                decls,
                &format!("{prefix}.rnn"),
                tap_widths.iter().sum::<usize>() + aux,
                hidden,
                layers,
            );
            hidden
        }
        Recurrent::PerTap { hidden, layers } => {
            for (i, w) in tap_widths.iter().enumerate() {
                gru_stack_decls(decls, &format!("{prefix}.rnn{i}"), w + aux, hidden, layers);
            }
            hidden * tap_widths.len()
        }
    }
}

fn body_decls(spec: &ModelSpec, dims: &ModelDims) -> (Vec<ParamDecl>, usize) {
    let mut decls = Vec::new();
    let width = match &spec.body {
        Body::Trunk(t) => trunk_decls(&mut decls, "trunk", t, dims),
        Body::Fused { members, mode, width } => {
            let total: usize = members
                .iter()
                .enumerate()
                .map(|(i, m)| trunk_decls(&mut decls, &format!("m{i}"), m, dims))
                .sum();
            match mode {
                FusionMode::Rnn => gru_decls(&mut decls, "fusion.gru", total, *width),
                FusionMode::Fc => dense_decls(&mut decls, "fusion.fc", total, *width),
            }
            *width
        }
    };
    (decls, width)
}

/// Width of the feature vector each head reads.
pub fn feature_width(spec: &ModelSpec, dims: &ModelDims) -> usize {
    body_decls(spec, dims).1
}

/// Width of each member trunk's output.
pub fn trunk_output_width(trunk: &TrunkSpec, dims: &ModelDims) -> usize {
    trunk_decls(&mut Vec::new(), "t", trunk, dims)
}

fn all_decls(spec: &ModelSpec, dims: &ModelDims) -> Vec<ParamDecl> {
    let (mut decls, width) = body_decls(spec, dims);
    for h in &spec.heads {
        dense_decls(&mut decls, &format!("head.{}", h.key()), width, h.width());
    }
    decls
}

fn check_dims(spec: &ModelSpec, dims: &ModelDims) -> Result<(), ModelError> {
    if dims.feature_dim == 0 {
        return Err(ModelError::InvalidSpec("feature dimension must be positive".into()));
    }
    if spec.needs_audio() && dims.audio_dim == 0 {
        return Err(ModelError::InvalidSpec("two streams need an audio dimension".into()));
    }
    if spec.needs_landmarks() && dims.landmark_dim == 0 {
        return Err(ModelError::InvalidSpec(
            "landmark concatenation needs a landmark dimension".into(),
        ));
    }
    Ok(())
}

/// Run a GRU stack over time on a time-major `T·B × in` input.
#[allow(clippy::too_many_arguments)]
fn gru_sequence(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    x: Var,
    input: usize,
    hidden: usize,
    layers: usize,
    batch: usize,
    steps: usize,
) -> Result<Var, ModelError> {
    let mut seq = x;
    for l in 0..layers {
        let cell = GruCell::new(if l == 0 { input } else { hidden }, hidden);
        let vars = bound.gru(&format!("{prefix}.gru{l}"));
        seq = run_gru(g, &cell, &vars, seq, batch, steps)?;
    }
    Ok(seq)
}

fn run_gru(
    g: &mut Graph,
    cell: &GruCell,
    vars: &GruVars,
    x: Var,
    batch: usize,
    steps: usize,
) -> Result<Var, ModelError> {
    let mut h = g.constant(Tensor::zeros(&[batch, cell.hidden_dim]));
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = if steps == 1 {
            x
        } else {
            let rows: Vec<usize> = (t * batch..(t + 1) * batch).collect();
            g.select_rows(x, &rows)?
        };
        h = gru_step(g, cell, vars, xt, h)?;
        outs.push(h);
    }
    if steps == 1 {
        Ok(h)
    } else {
        Ok(g.concat_rows(&outs)?)
    }
}

impl Model {
    pub fn build(spec: ModelSpec, dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        check_dims(&spec, &dims)?;
        let params = init_params(&all_decls(&spec, &dims), seed);
        Ok(Self { spec, dims, params })
    }

    /// Wrap existing parameters; names and shapes must match the spec.
    pub fn from_params(spec: ModelSpec, dims: ModelDims, params: ParamSet) -> Result<Self, ModelError> {
        spec.validate()?;
        check_dims(&spec, &dims)?;
        let decls = all_decls(&spec, &dims);
        if decls.len() != params.len() {
            return Err(ModelError::BadParams(format!(
                "{} entries, expected {}",
                params.len(),
                decls.len()
            )));
        }
        for (d, (name, t)) in decls.iter().zip(params.iter()) {
            if d.name != name || d.shape != t.shape() {
                return Err(ModelError::BadParams(d.name.clone()));
            }
        }
        Ok(Self { spec, dims, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Whether a parameter belongs to an output head rather than the trunk.
    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    /// Register the parameters on `g`; constants when `trainable` is false.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (i, (name, t)) in self.params.iter().enumerate() {
            vars.push(if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            });
            index.insert(name.to_string(), i);
        }
        BoundParams { vars, index }
    }

    /// Use graph vars already created for this model's parameters, in
    /// parameter order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> BoundParams {
        assert_eq!(vars.len(), self.params.len(), "one var per parameter");
        let index = self
            .params
            .names()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect();
        BoundParams { vars, index }
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<(), ModelError> {
        let expect = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(ModelError::ShapeMismatch { what, expected, got })
            }
        };
        expect("features", self.dims.feature_dim, batch.features.cols())?;
        if self.spec.needs_audio() {
            expect(
                "audio",
                self.dims.audio_dim,
                batch.audio.as_ref().map_or(0, Tensor::cols),
            )?;
        }
        if self.spec.needs_landmarks() {
            expect(
                "landmarks",
                self.dims.landmark_dim,
                batch.landmarks.as_ref().map_or(0, Tensor::cols),
            )?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn trunk_forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        prefix: &str,
        t: &TrunkSpec,
        batch: &SequenceBatch,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var, ModelError> {
        let mut x = g.constant(batch.features.clone());
        let mut layers = Vec::with_capacity(t.backbone.len());
        for l in 0..t.backbone.len() {
            let p = format!("{prefix}.bb{l}");
            let pre = dense(g, x, bound.get(&format!("{p}.w")), bound.get(&format!("{p}.b")))?;
            x = g.relu(pre);
            layers.push(x);
        }
        let mut aux = Vec::new();
        if t.streams == 2 {
            let mut a = g.constant(batch.audio.clone().expect("checked"));
            for l in 0..t.backbone.len() {
                let p = format!("{prefix}.audio{l}");
                let pre = dense(g, a, bound.get(&format!("{p}.w")), bound.get(&format!("{p}.b")))?;
                a = g.relu(pre);
            }
            aux.push(a);
        }
        if t.landmark_concat {
            aux.push(g.constant(batch.landmarks.clone().expect("checked")));
        }
        let taps: Vec<Var> = t.taps.iter().map(|&i| layers[i]).collect();
        let width_of = |g: &Graph, v: Var| g.value(v).cols();
        match t.recurrent {
            Recurrent::None => {
                let parts: Vec<Var> = taps.iter().chain(&aux).copied().collect();
                let feats = concat(g, &parts)?;
                Ok(dropout(g, feats, t.dropout, train, rng)?)
            }
            Recurrent::Single { hidden, layers } => {
                let parts: Vec<Var> = taps.iter().chain(&aux).copied().collect();
                let feats = concat(g, &parts)?;
                let feats = dropout(g, feats, t.dropout, train, rng)?;
                let input = width_of(g, feats);
                gru_sequence(
                    g,
                    bound,
                    &format!("{prefix}.rnn"),
                    feats,
                    input,
                    hidden,
                    layers,
                    batch.batch,
                    batch.steps,
                )
            }
            Recurrent::PerTap { hidden, layers } => {
                let mut branches = Vec::with_capacity(taps.len());
                for (i, &tap) in taps.iter().enumerate() {
                    let parts: Vec<Var> = std::iter::once(tap).chain(aux.iter().copied()).collect();
                    let feats = concat(g, &parts)?;
                    let feats = dropout(g, feats, t.dropout, train, rng)?;
                    let input = width_of(g, feats);
                    branches.push(gru_sequence(
                        g,
                        bound,
                        &format!("{prefix}.rnn{i}"),
                        feats,
                        input,
                        hidden,
                        layers,
                        batch.batch,
                        batch.steps,
                    )?);
                }
                Ok(g.concat_cols(&branches)?)
            }
        }
    }

    /// Forward pass on `g`. `rng` drives dropout and is untouched when
    /// `train` is false.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        batch: &SequenceBatch,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ModelOutputs, ModelError> {
        self.check_batch(batch)?;
        let features = match &self.spec.body {
            Body::Trunk(t) => self.trunk_forward(g, bound, "trunk", t, batch, train, rng)?,
            Body::Fused { members, mode, width } => {
                let mut outs = Vec::with_capacity(members.len());
                for (i, m) in members.iter().enumerate() {
                    outs.push(self.trunk_forward(g, bound, &format!("m{i}"), m, batch, train, rng)?);
                }
                let joined = concat(g, &outs)?;
                match mode {
                    FusionMode::Rnn => {
                        let cell = GruCell::new(g.value(joined).cols(), *width);
                        run_gru(g, &cell, &bound.gru("fusion.gru"), joined, batch.batch, batch.steps)?
                    }
                    FusionMode::Fc => {
                        let pre = dense(g, joined, bound.get("fusion.fc.w"), bound.get("fusion.fc.b"))?;
                        g.relu(pre)
                    }
                }
            }
        };
        let mut preds = BatchPredictions::default();
        for h in &self.spec.heads {
            let key = h.key();
            let out = dense(
                g,
                features,
                bound.get(&format!("head.{key}.w")),
                bound.get(&format!("head.{key}.b")),
            )?;
            match h {
                Head::Va => preds.va = Some(out),
                Head::Expr => {
                    preds.expr_logits = Some(out);
                    preds.expr_probs = Some(g.softmax_rows(out));
                }
                Head::Au => {
                    preds.au_logits = Some(out);
                    preds.au_probs = Some(g.sigmoid(out));
                }
                Head::Compound(_) => preds.compound_logits = Some(out),
            }
        }
        Ok(ModelOutputs {
            features,
            predictions: preds,
        })
    }

    /// Evaluation-mode outputs for every frame, in the batch's row order.
    pub fn predict(&self, batch: &SequenceBatch) -> Result<Vec<FrameOutput>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut g, &bound, batch, false, &mut unused)?.predictions;
        let mut frames = vec![FrameOutput::default(); batch.rows()];
        for (r, f) in frames.iter_mut().enumerate() {
            if let Some(v) = out.va {
                let row = g.value(v).row(r);
                f.va = Some([row[0], row[1]]);
            }
            if let Some(p) = out.expr_probs {
                f.expr = Some(g.value(p).row(r).try_into().expect("7 columns"));
            }
            if let Some(p) = out.au_probs {
                f.au = Some(g.value(p).row(r).try_into().expect("17 columns"));
            }
            if let Some(c) = out.compound_logits {
                f.compound = Some(crate::autodiff::softmax(g.value(c).row(r)));
            }
        }
        Ok(frames)
    }

    /// Per-frame predictions for one sequence plus the per-dimension VA median.
    pub fn predict_sequence(&self, frames: &[FrameInput]) -> Result<SequencePrediction, ModelError> {
        if frames.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let batch = SequenceBatch::from_sequences(&[frames.to_vec()])?;
        let outs = self.predict(&batch)?;
        let median_va = if self.spec.has_head(Head::Va) {
            let v: Vec<f64> = outs.iter().map(|o| o.va.unwrap()[0]).collect();
            let a: Vec<f64> = outs.iter().map(|o| o.va.unwrap()[1]).collect();
            Some([median(&v).unwrap(), median(&a).unwrap()])
        } else {
            None
        };
        Ok(SequencePrediction {
            frames: outs,
            median_va,
        })
    }
}

fn concat(g: &mut Graph, parts: &[Var]) -> Result<Var, ModelError> {
    Ok(if parts.len() == 1 {
        parts[0]
    } else {
        g.concat_cols(parts)?
    })
}
