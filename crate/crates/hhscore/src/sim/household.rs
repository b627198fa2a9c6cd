//! Household simulation: sampling member speakers, utterance splits, and
//! guest pools from a corpus, including hard households whose members are
//! pairwise similar at the speaker level.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{average_profile, cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::sim::corpus::Corpus;

/// Per-member utterance budget and guest pool size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub enroll_per_member: usize,
    pub eval_per_member: usize,
    pub max_train_per_member: usize,
    pub guest_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            enroll_per_member: 4,
            eval_per_member: 10,
            max_train_per_member: 50,
            guest_count: 250,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.enroll_per_member == 0 || self.eval_per_member == 0 {
            return Err(Error::Config(
                "enroll and eval counts per member must be positive".into(),
            ));
        }
        if self.guest_count == 0 {
            return Err(Error::Config("guest count must be positive".into()));
        }
        Ok(())
    }

    fn required_per_member(&self) -> usize {
        self.enroll_per_member + self.eval_per_member
    }
}

/// One member's disjoint utterance-id splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSplit {
    pub speaker_id: String,
    pub enroll: Vec<String>,
    pub eval: Vec<String>,
    pub train: Vec<String>,
}

/// A guest test utterance from a non-member speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestUtterance {
    pub speaker_id: String,
    pub utterance_id: String,
}

/// A simulated household: members with splits plus a guest pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Household {
    pub household_id: String,
    pub members: Vec<MemberSplit>,
    pub guests: Vec<GuestUtterance>,
}

impl Household {
    pub fn member_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.speaker_id.as_str()).collect()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

fn build_household(
    corpus: &Corpus,
    household_id: String,
    member_ids: &[String],
    split: &SplitSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Household> {
    let mut members = Vec::with_capacity(member_ids.len());
    for speaker_id in member_ids {
        let utterances = corpus.utterances(speaker_id)?;
        let required = split.required_per_member();
        if utterances.len() < required {
            return Err(Error::SpeakerTooSmall {
                speaker_id: speaker_id.clone(),
                available: utterances.len(),
                required,
            });
        }
        let mut order: Vec<usize> = (0..utterances.len()).collect();
        order.shuffle(rng);
        let id_at = |i: usize| utterances[order[i]].0.clone();
        let enroll: Vec<String> = (0..split.enroll_per_member).map(id_at).collect();
        let eval: Vec<String> = (split.enroll_per_member..required).map(id_at).collect();
        let train_len = (utterances.len() - required).min(split.max_train_per_member);
        let train: Vec<String> = (required..required + train_len).map(id_at).collect();
        members.push(MemberSplit { speaker_id: speaker_id.clone(), enroll, eval, train });
    }

    let member_set: BTreeSet<&str> = member_ids.iter().map(String::as_str).collect();
    let mut pool: Vec<GuestUtterance> = Vec::new();
    for (speaker, utterances) in corpus.speakers() {
        if member_set.contains(speaker) {
            continue;
        }
        for (utterance_id, _) in utterances {
            pool.push(GuestUtterance {
                speaker_id: speaker.to_string(),
                utterance_id: utterance_id.clone(),
            });
        }
    }
    if pool.is_empty() {
        return Err(Error::GuestPoolEmpty);
    }
    let take = split.guest_count.min(pool.len());
    let picked = rand::seq::index::sample(rng, pool.len(), take);
    let guests: Vec<GuestUtterance> = picked.iter().map(|i| pool[i].clone()).collect();

    Ok(Household { household_id, members, guests })
}

/// Samples `count` households of `size` members each, members drawn without
/// replacement per household; speakers may recur across households.
pub fn generate_random_households(
    corpus: &Corpus,
    size: usize,
    count: usize,
    split: &SplitSpec,
    seed: u64,
) -> Result<Vec<Household>> {
    split.validate()?;
    if size == 0 {
        return Err(Error::Config("household size must be positive".into()));
    }
    let speaker_ids: Vec<String> =
        corpus.speaker_ids().iter().map(|s| s.to_string()).collect();
    if speaker_ids.len() < size {
        return Err(Error::DegenerateHousehold(format!(
            "corpus has {} speakers, need {size} per household",
            speaker_ids.len()
        )));
    }
    let mut households = Vec::with_capacity(count);
    for h in 0..count {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, h as u64));
        let picked = rand::seq::index::sample(&mut rng, speaker_ids.len(), size);
        let member_ids: Vec<String> = picked.iter().map(|i| speaker_ids[i].clone()).collect();
        households.push(build_household(
            corpus,
            format!("hh{h:05}"),
            &member_ids,
            split,
            &mut rng,
        )?);
    }
    Ok(households)
}

/// Re-normalized mean of up to `m` randomly selected utterance embeddings of
/// one speaker.
pub fn speaker_level_embedding(
    corpus: &Corpus,
    speaker_id: &str,
    m: usize,
    seed: u64,
) -> Result<EmbeddingVector> {
    if m == 0 {
        return Err(Error::Config("speaker-level sample count must be positive".into()));
    }
    let utterances = corpus.utterances(speaker_id)?;
    let take = m.min(utterances.len());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, utterances.len(), take);
    let selected: Vec<EmbeddingVector> =
        picked.iter().map(|i| utterances[i].1.clone()).collect();
    average_profile(&selected)
}

/// Speaker-level embeddings for every speaker; speaker `i` (in id order)
/// uses the derived seed `derive_seed(seed, i)`.
pub fn speaker_level_embeddings(
    corpus: &Corpus,
    m: usize,
    seed: u64,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    corpus
        .speaker_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            speaker_level_embedding(corpus, id, m, derive_seed(seed, i as u64))
                .map(|e| (id.to_string(), e))
        })
        .collect()
}

/// Empirical percentile of cross-speaker utterance-pair cosine similarities,
/// exhaustive when the pair count fits the budget and sampled otherwise.
/// Nearest-rank convention: percentile 100 is the maximum.
pub fn similarity_threshold(
    corpus: &Corpus,
    percentile: f64,
    sample_budget: usize,
    seed: u64,
) -> Result<f64> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Config(format!(
            "percentile must be in [0, 100], got {percentile}"
        )));
    }
    if sample_budget == 0 {
        return Err(Error::Config("sample budget must be positive".into()));
    }
    if corpus.speaker_count() < 2 {
        return Err(Error::Data(
            "similarity threshold needs at least 2 speakers".into(),
        ));
    }
    let flat: Vec<(usize, &EmbeddingVector)> = corpus
        .speakers()
        .enumerate()
        .flat_map(|(i, (_, utts))| utts.iter().map(move |(_, e)| (i, e)))
        .collect();
    let total = flat.len();
    let same_speaker_pairs: usize = corpus
        .speakers()
        .map(|(_, utts)| utts.len() * (utts.len() - 1) / 2)
        .sum();
    let cross_pairs = total * (total - 1) / 2 - same_speaker_pairs;

    let mut sims: Vec<f64>;
    if cross_pairs <= sample_budget {
        sims = Vec::with_capacity(cross_pairs);
        for a in 0..total {
            for b in (a + 1)..total {
                if flat[a].0 != flat[b].0 {
                    sims.push(cosine_similarity(flat[a].1, flat[b].1)?);
                }
            }
        }
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        sims = Vec::with_capacity(sample_budget);
        let mut attempts = 0usize;
        let attempt_cap = sample_budget.saturating_mul(20);
        while sims.len() < sample_budget && attempts < attempt_cap {
            attempts += 1;
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            if flat[a].0 == flat[b].0 {
                continue;
            }
            sims.push(cosine_similarity(flat[a].1, flat[b].1)?);
        }
        if sims.is_empty() {
            return Err(Error::Data(
                "could not sample any cross-speaker pair within the attempt budget".into(),
            ));
        }
    }
    sims.sort_by(f64::total_cmp);
    let n = sims.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    Ok(sims[rank.clamp(1, n) - 1])
}

/// Samples households whose members form cliques in the speaker-similarity
/// graph (speaker-level cosine strictly above `threshold`), grown greedily
/// from random seeds with up to `max_restarts` restarts per household.
#[allow(clippy::too_many_arguments)]
pub fn generate_hard_households(
    corpus: &Corpus,
    levels: &BTreeMap<String, EmbeddingVector>,
    size: usize,
    count: usize,
    threshold: f64,
    split: &SplitSpec,
    seed: u64,
    max_restarts: usize,
) -> Result<Vec<Household>> {
    split.validate()?;
    if size == 0 {
        return Err(Error::Config("household size must be positive".into()));
    }
    let eligible: Vec<String> = corpus
        .speakers()
        .filter(|(_, utts)| utts.len() >= split.required_per_member())
        .map(|(id, _)| id.to_string())
        .collect();
    for id in &eligible {
        if !levels.contains_key(id) {
            return Err(Error::NotFound(format!("speaker-level embedding for '{id}'")));
        }
    }
    if eligible.len() < size {
        return Err(Error::DegenerateHousehold(format!(
            "only {} speakers have enough utterances, need {size} per household",
            eligible.len()
        )));
    }
    let n = eligible.len();
    let mut adjacent = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let cos = cosine_similarity(&levels[&eligible[i]], &levels[&eligible[j]])?;
            adjacent[i][j] = cos > threshold;
            adjacent[j][i] = adjacent[i][j];
        }
    }

    let mut households = Vec::with_capacity(count);
    for h in 0..count {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, h as u64));
        let mut clique: Option<Vec<usize>> = None;
        for _ in 0..max_restarts {
            let mut grown = vec![rng.random_range(0..n)];
            while grown.len() < size {
                let candidates: Vec<usize> = (0..n)
                    .filter(|&c| {
                        !grown.contains(&c) && grown.iter().all(|&g| adjacent[g][c])
                    })
                    .collect();
                match candidates.as_slice() {
                    [] => break,
                    cs => grown.push(cs[rng.random_range(0..cs.len())]),
                }
            }
            if grown.len() == size {
                clique = Some(grown);
                break;
            }
        }
        let Some(mut clique) = clique else {
            return Err(Error::CliqueSearch { requested: count, achieved: households.len() });
        };
        clique.sort_unstable();
        let member_ids: Vec<String> = clique.iter().map(|&i| eligible[i].clone()).collect();
        households.push(build_household(
            corpus,
            format!("hh{h:05}"),
            &member_ids,
            split,
            &mut rng,
        )?);
    }
    Ok(households)
}

/// Serializes households as pretty-printed JSON; round-trips losslessly.
pub fn households_to_json(households: &[Household]) -> Result<String> {
    serde_json::to_string_pretty(households)
        .map_err(|e| Error::Format(format!("household manifest serialization: {e}")))
}

pub fn households_from_json(json: &str) -> Result<Vec<Household>> {
    serde_json::from_str(json)
        .map_err(|e| Error::Format(format!("household manifest parse: {e}")))
}

pub fn save_households(path: impl AsRef<Path>, households: &[Household]) -> Result<()> {
    std::fs::write(path, households_to_json(households)?)?;
    Ok(())
}

pub fn load_households(path: impl AsRef<Path>) -> Result<Vec<Household>> {
    households_from_json(&std::fs::read_to_string(path)?)
}
