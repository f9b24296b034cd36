//! Named parameter sets and Glorot-uniform initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Weight { fan_in: usize, fan_out: usize },
    /// Zero.
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamDecl {
    pub fn weight(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![fan_in, fan_out],
            kind: ParamKind::Weight { fan_in, fan_out },
        }
    }

    pub fn bias(name: impl Into<String>, width: usize) -> Self {
        Self {
            name: name.into(),
            shape: vec![1, width],
            kind: ParamKind::Bias,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Ordered, named tensors. Order is the declaration order and is what the
/// checkpoint format preserves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Copy every tensor of `other` whose name and shape match.
    /// Returns the names that were copied.
    pub fn load_matching(&mut self, other: &ParamSet) -> Vec<String> {
        let mut loaded = Vec::new();
        for (name, t) in &mut self.entries {
            if let Some(src) = other.get(name) {
                if src.shape() == t.shape() {
                    *t = src.clone();
                    loaded.push(name.clone());
                }
            }
        }
        loaded
    }
}

/// Initialise a parameter set from declarations; reproducible by `seed`.
pub fn init_params(decls: &[ParamDecl], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for d in decls {
        let data = match d.kind {
            ParamKind::Bias => vec![0.0; d.numel()],
            ParamKind::Weight { fan_in, fan_out } => {
                let bound = glorot_bound(fan_in, fan_out);
                (0..d.numel()).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        set.push(
            d.name.clone(),
            Tensor::new(d.shape.clone(), data).expect("declared shape"),
        );
    }
    set
}
