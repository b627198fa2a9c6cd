//! Corpus storage, synthetic corpus generation, and household simulation.

pub mod corpus;
pub mod household;
pub mod synth;

pub use corpus::{Corpus, NORM_TOLERANCE};
pub use household::{
    generate_hard_households, generate_random_households, households_from_json,
    households_to_json, load_households, save_households, similarity_threshold,
    speaker_level_embedding, speaker_level_embeddings, GuestUtterance, Household, MemberSplit,
    SplitSpec,
};
pub use synth::{generate_synthetic_corpus, SyntheticConfig};
