//! Contrastive training-pair construction and label corruption.
//!
//! Positives pair up utterances sharing a member label; negatives pair up
//! utterances across member labels and member-guest combinations. Guest-guest
//! pairs are never built. The set carries the imbalance weight
//! `negative_count / positive_count` applied to positive terms in the loss.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// One training utterance with its (possibly corrupted) speaker label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub utterance_id: String,
    pub speaker_label: String,
    pub embedding: EmbeddingVector,
}

/// Indexes of two distinct utterances in a [`TrainingPairSet`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrainingPair {
    pub first: u32,
    pub second: u32,
    pub positive: bool,
}

/// All pairs for one household plus the positive/negative imbalance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairSet {
    embeddings: Vec<EmbeddingVector>,
    pairs: Vec<TrainingPair>,
    positive_count: usize,
    negative_count: usize,
    weight: f64,
}

impl TrainingPairSet {
    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn embedding(&self, index: u32) -> &EmbeddingVector {
        &self.embeddings[index as usize]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    /// Imbalance weight `negative_count / positive_count`, fixed once for the
    /// whole set (not per batch).
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Concatenates several households' pair sets into one (for training a
    /// single shared model). Indices are re-based and the weight is
    /// recomputed from the combined counts.
    pub fn merge(sets: Vec<TrainingPairSet>) -> Result<TrainingPairSet> {
        let mut embeddings = Vec::new();
        let mut pairs = Vec::new();
        for set in sets {
            let offset = u32::try_from(embeddings.len())
                .map_err(|_| Error::Config("merged pair set exceeds index capacity".into()))?;
            embeddings.extend(set.embeddings);
            pairs.extend(set.pairs.into_iter().map(|p| TrainingPair {
                first: p.first + offset,
                second: p.second + offset,
                positive: p.positive,
            }));
        }
        finalize(embeddings, pairs)
    }
}

fn finalize(embeddings: Vec<EmbeddingVector>, pairs: Vec<TrainingPair>) -> Result<TrainingPairSet> {
    let positive_count = pairs.iter().filter(|p| p.positive).count();
    let negative_count = pairs.len() - positive_count;
    if positive_count == 0 || negative_count == 0 {
        return Err(Error::DegenerateHousehold(format!(
            "training needs both pair kinds, got {positive_count} positive and \
             {negative_count} negative"
        )));
    }
    let weight = negative_count as f64 / positive_count as f64;
    Ok(TrainingPairSet {
        embeddings,
        pairs,
        positive_count,
        negative_count,
        weight,
    })
}

/// Builds the full pair set for one household.
///
/// `members` carries the labeled training utterances (labels define the
/// groups); `guests` contribute only as negative partners, capped per member
/// label when `guest_negative_cap` is set. The combined list is shuffled
/// deterministically by `seed`.
pub fn build_pairs(
    members: &[LabeledUtterance],
    guests: &[LabeledUtterance],
    guest_negative_cap: Option<usize>,
    seed: u64,
) -> Result<TrainingPairSet> {
    let total = members.len() + guests.len();
    u32::try_from(total).map_err(|_| Error::Config("too many utterances to index".into()))?;

    let mut embeddings = Vec::with_capacity(total);
    embeddings.extend(members.iter().map(|u| u.embedding.clone()));
    embeddings.extend(guests.iter().map(|u| u.embedding.clone()));

    let mut groups: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for (i, u) in members.iter().enumerate() {
        groups.entry(&u.speaker_label).or_default().push(i as u32);
    }
    let guest_indices: Vec<u32> = (members.len()..total).map(|i| i as u32).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();

    for indices in groups.values() {
        for (a, &i) in indices.iter().enumerate() {
            for &j in &indices[a + 1..] {
                pairs.push(TrainingPair { first: i, second: j, positive: true });
            }
        }
    }

    let group_list: Vec<&Vec<u32>> = groups.values().collect();
    for (a, left) in group_list.iter().enumerate() {
        for right in &group_list[a + 1..] {
            for &i in left.iter() {
                for &j in right.iter() {
                    pairs.push(TrainingPair { first: i, second: j, positive: false });
                }
            }
        }
    }

    if !guest_indices.is_empty() {
        for indices in groups.values() {
            let all = indices.len() * guest_indices.len();
            match guest_negative_cap {
                Some(cap) if cap < all => {
                    let chosen = rand::seq::index::sample(&mut rng, all, cap);
                    for flat in chosen {
                        let i = indices[flat / guest_indices.len()];
                        let j = guest_indices[flat % guest_indices.len()];
                        pairs.push(TrainingPair { first: i, second: j, positive: false });
                    }
                }
                _ => {
                    for &i in indices.iter() {
                        for &j in &guest_indices {
                            pairs.push(TrainingPair { first: i, second: j, positive: false });
                        }
                    }
                }
            }
        }
    }

    pairs.shuffle(&mut rng);
    finalize(embeddings, pairs)
}

/// How a corrupted label is drawn from the household's label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelDraw {
    /// Uniform over all N member labels (may re-draw the true label), so the
    /// effective flip rate is `epsilon * (N-1) / N`.
    AmongAll,
    /// Uniform over the N-1 other labels; flip rate is exactly `epsilon`.
    AmongOthers,
}

/// Independently re-labels each training utterance with probability
/// `epsilon`, drawing the replacement from the household's member labels.
///
/// Enrollment and evaluation utterances must never pass through here; only
/// the training split is corrupted.
pub fn corrupt_labels(
    utterances: &[LabeledUtterance],
    member_labels: &[String],
    epsilon: f64,
    draw: LabelDraw,
    seed: u64,
) -> Result<Vec<LabeledUtterance>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "label error rate must be in [0, 1], got {epsilon}"
        )));
    }
    if member_labels.is_empty() {
        return Err(Error::EmptyInput("member label set is empty"));
    }
    let mut labels: Vec<&String> = member_labels.iter().collect();
    labels.sort();
    labels.dedup();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(utterances.len());
    for u in utterances {
        let true_pos = labels
            .binary_search(&&u.speaker_label)
            .map_err(|_| Error::Data(format!(
                "utterance '{}' carries label '{}' outside the member set",
                u.utterance_id, u.speaker_label
            )))?;
        let mut relabeled = u.clone();
        if rng.random::<f64>() < epsilon {
            match draw {
                LabelDraw::AmongAll => {
                    relabeled.speaker_label = labels[rng.random_range(0..labels.len())].clone();
                }
                LabelDraw::AmongOthers => {
                    if labels.len() > 1 {
                        let mut k = rng.random_range(0..labels.len() - 1);
                        if k >= true_pos {
                            k += 1;
                        }
                        relabeled.speaker_label = labels[k].clone();
                    }
                }
            }
        }
        out.push(relabeled);
    }
    Ok(out)
}
