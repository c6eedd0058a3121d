//! Tools for testing whether text embeddings of LLM-written source summaries
//! encode the physical measurements of X-ray sources.
//!
//! The pipeline: load catalog records ([`corpus`]), summarize and embed them
//! through a chat/embedding backend ([`llmclient`]), project with exact t-SNE
//! ([`tsne`]), score k-NN purity against binned properties ([`purity`]),
//! train a sparse autoencoder on the embeddings ([`sae`]) and attribute
//! clusters to SAE features ([`analysis`]).

pub mod analysis;
pub mod corpus;
pub mod digest;
pub mod llmclient;
pub mod purity;
pub mod sae;
pub mod synth;
pub mod text;
pub mod tsne;
