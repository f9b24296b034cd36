//! Multi-task facial affect learning at desk scale.
//!
//! Valence/arousal regression, basic-expression classification and action
//! unit detection share one trunk. Tasks are coupled through an
//! emotion ↔ AU relatedness table (co-annotation, soft labels and
//! distribution matching). The crate also covers CCC-based losses and
//! metrics, a small reverse-mode autodiff engine, the task-aligned batch
//! sampler, ensemble fusion, zero-shot compound expressions and the
//! preprocessing arithmetic.

pub mod affect_types;
pub mod autodiff;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod relatedness;
pub mod sampler;
pub mod zeroshot;

pub use affect_types::{
    AUVector, AnnotatedSample, CompoundLabel, ExpressionLabel, Label, PredictionRecord, Split, Task, ValenceArousal,
    AU_IDS, NUM_AUS, NUM_EXPRESSIONS,
};
pub use losses::{Coupling, LossWeights};
pub use metrics::{ccc, MetricReport, Score, SeriesPair};
pub use models::{Head, Model, ModelDims, ModelSpec, Recurrent, TrunkSpec};
pub use relatedness::RelatednessTable;
pub use sampler::{aligned_batch_sizes, TaskPartition};
