//! Deterministic derivation of child seeds for nested random streams.
//!
//! Every randomized stage (corpus synthesis, household sampling, label
//! corruption, pair shuffling, training) owns a seed derived from the run
//! seed and a stream index, so stages stay reproducible independently of
//! each other and of execution order.

/// Derives a child seed from a parent seed and a stream index.
///
/// Uses the splitmix64 finalizer, so nearby indices yield unrelated seeds.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    let mut z = parent
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
