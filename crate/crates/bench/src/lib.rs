//! Shared fixtures for the benchmarks.

use affectkit::models::{FrameInput, SequenceBatch};
use affectkit::{Head, Model, ModelDims, ModelSpec, Recurrent, TrunkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise in `[-1, 1)`.
pub fn series(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Dense trunk over `feature_dim` inputs feeding a single GRU stack, with
/// VA, expression and AU heads.
pub fn gru_model(feature_dim: usize, hidden: usize, seed: u64) -> Model {
    let spec = ModelSpec::new(
        TrunkSpec {
            recurrent: Recurrent::Single { hidden, layers: 1 },
            ..TrunkSpec::dense(vec![64])
        },
        vec![Head::Va, Head::Expr, Head::Au],
    );
    Model::build(spec, ModelDims::visual(feature_dim), seed).expect("valid model")
}

pub fn sequence_batch(batch: usize, steps: usize, feature_dim: usize, seed: u64) -> SequenceBatch {
    let seqs: Vec<Vec<FrameInput>> = (0..batch)
        .map(|b| {
            (0..steps)
                .map(|t| FrameInput::visual(series(feature_dim, seed ^ (((b * steps + t) as u64) << 8))))
                .collect()
        })
        .collect();
    SequenceBatch::from_sequences(&seqs).expect("equal-length sequences")
}
