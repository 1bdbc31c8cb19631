//! Tensors, reverse-mode differentiation, and the attention reranker.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use model::{ModelConfig, RerankModel, ScoreVars, TripInstance, VocabSizes};
pub use params::ParameterStore;
pub use tensor::Tensor;
