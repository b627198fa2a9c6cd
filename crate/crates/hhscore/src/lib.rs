//! Household-adapted speaker identification scoring.
//!
//! A global speaker-embedding space is adapted per household: a small affine
//! projection with ReLU is trained on pairs drawn from the household's own
//! utterances, and its distance score is fused with the raw cosine score
//! through a learned sigmoid. The crate also ships a synthetic corpus
//! generator, a household sampler, a pair builder with label corruption, an
//! SGD/Adam trainer for the weighted pair loss, and an identification
//! evaluator (EER over accept/reject decisions with misidentification counted
//! against the miss rate).

mod bytes;
mod dd;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod pairs;
pub mod seed;
pub mod sim;
pub mod trainer;

pub use embedding::{
    average_profile, componentwise_mean_profile, cosine_similarity, euclidean_distance,
    l2_normalize, EmbeddingVector,
};
pub use error::{Error, Result};
