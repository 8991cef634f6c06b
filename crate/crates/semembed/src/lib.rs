//! Structured visual-semantic embedding learning over precomputed feature
//! vectors: a linear + unit-normalization projection into a label-embedding
//! space trained with ranking, discriminative (contrastive/triplet), and
//! difference losses, plus nearest-neighbor inference, zero-shot
//! evaluation, region mining, and a multi-label metric suite.
//!
//! Batch objectives and dataset ranking have rayon-backed variants behind
//! the `parallel` feature (enabled by default); the sequential paths are
//! always available and bit-reproducible for a fixed seed.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod fileio;
pub mod gradcheck;
pub mod losses;
pub mod mining;
pub mod sampling;
pub mod synth;
pub mod trainer;

pub use embedding::{cosine_distance, Dataset, EmbeddingModel, Instance, LabelTable};
pub use error::{Error, Result};
pub use eval::{EvalReport, PredictionRanking};
pub use losses::{DiscMode, LossConfig, LossValueAndGrad};
pub use sampling::{Batch, SamplerConfig};
pub use synth::SyntheticSpec;
pub use trainer::{TrainConfig, TrainState};
