//! Clinical named-entity recognition: a character-CNN + BiLSTM + CRF tagger
//! for immune-mediated and infectious disease narratives, with corpus
//! tooling, strict entity-level evaluation, inter-annotator agreement and
//! rule-based knowledge-graph export.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training
//! uses `f64`; the aliases below fix the precision for common use.

pub mod cli;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod evaluation;
pub mod kgraph;
pub mod model;
pub mod network;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;

/// Double-precision tagger, the precision used for training.
pub type Tagger = model::Model<f64>;
/// Single-precision tagger for inference.
pub type Tagger32 = model::Model<f32>;
pub type Crf = crf::CrfParams<f64>;
pub type Network = network::NetworkParams<f64>;
pub type Embeddings = embeddings::EmbeddingTable<f64>;
pub type Checkpoint = training::Checkpoint<f64>;
