//! Base recommenders: embedding tables and the Wide&Deep / DeepFM main network.

mod embedding;
mod model;

pub use embedding::{EmbeddingTable, EMBEDDING_INIT};
pub use model::{Architecture, MainModel, ModelConfig};
