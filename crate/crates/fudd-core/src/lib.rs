//! Zero-shot image classification with follow-up differential descriptions.
//!
//! The pipeline works on precomputed embeddings: a first classification pass
//! over base class descriptions finds the most ambiguous classes for each
//! image, an LLM generates captions describing the visual differences between
//! those classes, and a follow-up pass restricted to the ambiguous classes
//! uses the new descriptions to pick the final label.

pub mod catalog;
pub mod classifier;
pub mod diffgen;
pub mod embedder;
pub mod gateway;
pub mod pipeline;
pub mod prompt;
pub mod vector;

pub use catalog::{ClassCatalog, ClassEntry, DatasetManifest, Description, DescriptionSource};
pub use classifier::{AmbiguousSet, ClassEmbeddingTable};
pub use diffgen::{DifferentialRecord, PairwiseDescriptions};
pub use embedder::TextEmbedder;
pub use gateway::{ChatBackend, DescriptionGateway, GenerationParams, PairCache, TokenUsage};
pub use pipeline::{EvalReport, Method, PredictionTrace};
pub use prompt::{ChatExchange, Message, PromptMessages, Role};
pub use vector::{Embedding, EmbeddingMatrix};
