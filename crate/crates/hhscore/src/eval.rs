//! Open-set identification evaluation: rank-1 inference over enrolled
//! profiles, accept/reject error rates, and equal error rate.

use crate::embedding::{average_profile, cosine_similarity, EmbeddingVector, SpeakerProfile};
use crate::error::{Error, Result};
use crate::model::{baseline_score, HouseholdScoringModel};
use crate::sim::corpus::Corpus;
use crate::sim::household::Household;

/// How test utterances are scored against profiles.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// Shifted cosine (c + 1) / 2, no trained parameters.
    Baseline,
    /// Fused score of a trained model; no dropout at inference.
    Model(&'a HouseholdScoringModel),
}

impl Scorer<'_> {
    pub fn score(&self, profile: &EmbeddingVector, test: &EmbeddingVector) -> Result<f64> {
        match self {
            Scorer::Baseline => baseline_score(profile, test),
            Scorer::Model(m) => Ok(m.score_pair(profile, test, None)?.s_fused),
        }
    }
}

/// Ground truth of one test utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrialTruth {
    Enrolled(String),
    Guest,
}

/// One scored identification attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub household_id: String,
    pub truth: TrialTruth,
    pub predicted: String,
    pub s_max: f64,
}

/// FAR/FNIR at one operating threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub far: f64,
    pub fnir: f64,
    pub threshold: f64,
}

/// Equal error rate estimate with its operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerEstimate {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub fnir: f64,
}

/// Rank-1 identification result with the full per-profile score list.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub predicted: String,
    pub s_max: f64,
    /// One (speaker_id, score) per profile, in input profile order.
    pub scores: Vec<(String, f64)>,
}

/// Scores `test` against every profile and returns the argmax; exact score
/// ties go to the lexicographically smaller speaker id.
pub fn identify(
    scorer: Scorer,
    profiles: &[SpeakerProfile],
    test: &EmbeddingVector,
) -> Result<Identification> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("cannot identify against zero profiles"));
    }
    let mut scores = Vec::with_capacity(profiles.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, profile) in profiles.iter().enumerate() {
        let s = scorer.score(&profile.embedding, test)?;
        scores.push((profile.speaker_id.clone(), s));
        let better = match best {
            None => true,
            Some((bi, bs)) => {
                s > bs || (s == bs && profile.speaker_id < profiles[bi].speaker_id)
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    let (best_index, s_max) = best.expect("non-empty profiles");
    Ok(Identification {
        predicted: profiles[best_index].speaker_id.clone(),
        s_max,
        scores,
    })
}

/// Pseudo-label confidence gate: accepts when the rank-1 score clears `tau1`
/// and leads the runner-up by more than `tau2` (vacuous with one profile).
pub fn confidence_filter(identification: &Identification, tau1: f64, tau2: f64) -> bool {
    let mut sorted = identification.scores.clone();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let rank1 = sorted[0].1;
    if !(rank1 > tau1) {
        return false;
    }
    match sorted.get(1) {
        Some(&(_, rank2)) => rank1 - rank2 > tau2,
        None => true,
    }
}

struct TrialStats {
    all_scores: Vec<f64>,
    guest_scores: Vec<f64>,
    correct_scores: Vec<f64>,
    guest_count: usize,
    enrolled_count: usize,
    misidentified: usize,
}

fn collect_stats<'a>(trials: impl IntoIterator<Item = &'a Trial>) -> Result<TrialStats> {
    let mut stats = TrialStats {
        all_scores: Vec::new(),
        guest_scores: Vec::new(),
        correct_scores: Vec::new(),
        guest_count: 0,
        enrolled_count: 0,
        misidentified: 0,
    };
    for trial in trials {
        if !trial.s_max.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite trial score {} in household {}",
                trial.s_max, trial.household_id
            )));
        }
        stats.all_scores.push(trial.s_max);
        match &trial.truth {
            TrialTruth::Guest => {
                stats.guest_count += 1;
                stats.guest_scores.push(trial.s_max);
            }
            TrialTruth::Enrolled(speaker) => {
                stats.enrolled_count += 1;
                if trial.predicted == *speaker {
                    stats.correct_scores.push(trial.s_max);
                } else {
                    stats.misidentified += 1;
                }
            }
        }
    }
    if stats.guest_count == 0 {
        return Err(Error::DegenerateTrialSet("no guest trials".into()));
    }
    if stats.enrolled_count == 0 {
        return Err(Error::DegenerateTrialSet("no enrolled trials".into()));
    }
    stats.guest_scores.sort_by(f64::total_cmp);
    stats.correct_scores.sort_by(f64::total_cmp);
    Ok(stats)
}

impl TrialStats {
    fn rates(&self, tau: f64) -> ErrorRates {
        let guests_below = self.guest_scores.partition_point(|&s| s < tau);
        let accepted_guests = self.guest_count - guests_below;
        let correct_below = self.correct_scores.partition_point(|&s| s < tau);
        let enrolled_errors = self.misidentified + correct_below;
        ErrorRates {
            far: accepted_guests as f64 / self.guest_count as f64,
            fnir: enrolled_errors as f64 / self.enrolled_count as f64,
            threshold: tau,
        }
    }
}

/// FAR = fraction of guest trials with s_max ≥ τ; FNIR = fraction of
/// enrolled trials misidentified or with s_max < τ.
pub fn rates_at_threshold(trials: &[Trial], tau: f64) -> Result<ErrorRates> {
    Ok(collect_stats(trials)?.rates(tau))
}

pub fn eer_of<'a>(trials: impl IntoIterator<Item = &'a Trial>) -> Result<EerEstimate> {
    let stats = collect_stats(trials)?;
    let mut candidates = stats.all_scores.clone();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut best: Option<(f64, ErrorRates)> = None;
    for &tau in &candidates {
        let rates = stats.rates(tau);
        let gap = (rates.far - rates.fnir).abs();
        if best.as_ref().is_none_or(|(bg, _)| gap < *bg) {
            best = Some((gap, rates));
        }
    }
    let (_, rates) = best.expect("candidate list is non-empty");
    Ok(EerEstimate {
        eer: (rates.far + rates.fnir) / 2.0,
        threshold: rates.threshold,
        far: rates.far,
        fnir: rates.fnir,
    })
}

/// Sweeps all distinct trial scores (with ±∞ sentinels) and returns the
/// midpoint of FAR and FNIR at the threshold minimizing their gap; the
/// smallest such threshold wins ties.
///
/// Misidentified enrolled trials count against FNIR at every threshold, so
/// they impose a floor; the sweep handles a floor above FAR by settling at
/// an extreme candidate.
pub fn eer(trials: &[Trial]) -> Result<EerEstimate> {
    eer_of(trials)
}

/// Runs the full identification protocol of one household: every member
/// eval utterance and every guest utterance is scored against all member
/// profiles built from enrollment utterances.
pub fn evaluate_household(
    scorer: Scorer,
    household: &Household,
    corpus: &Corpus,
) -> Result<Vec<Trial>> {
    if let Scorer::Model(m) = scorer {
        if m.input_dim() != corpus.dimension() {
            return Err(Error::Dimension {
                expected: corpus.dimension(),
                actual: m.input_dim(),
            });
        }
    }
    let mut profiles = Vec::with_capacity(household.members.len());
    for member in &household.members {
        let enroll: Vec<EmbeddingVector> = member
            .enroll
            .iter()
            .map(|u| corpus.embedding(&member.speaker_id, u).cloned())
            .collect::<Result<_>>()?;
        profiles.push(SpeakerProfile {
            speaker_id: member.speaker_id.clone(),
            embedding: average_profile(&enroll)?,
        });
    }

    let mut trials = Vec::new();
    for member in &household.members {
        for utterance_id in &member.eval {
            let test = corpus.embedding(&member.speaker_id, utterance_id)?;
            let id = identify(scorer, &profiles, test)?;
            trials.push(Trial {
                household_id: household.household_id.clone(),
                truth: TrialTruth::Enrolled(member.speaker_id.clone()),
                predicted: id.predicted,
                s_max: id.s_max,
            });
        }
    }
    for guest in &household.guests {
        let test = corpus.embedding(&guest.speaker_id, &guest.utterance_id)?;
        let id = identify(scorer, &profiles, test)?;
        trials.push(Trial {
            household_id: household.household_id.clone(),
            truth: TrialTruth::Guest,
            predicted: id.predicted,
            s_max: id.s_max,
        });
    }
    Ok(trials)
}

/// How EER is combined across households.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// One EER over the union of all trials.
    Pooled,
    /// Unweighted mean of per-household EERs.
    MeanPerHousehold,
}

pub fn aggregate_eer(per_household: &[Vec<Trial>], mode: Aggregation) -> Result<f64> {
    if per_household.is_empty() {
        return Err(Error::EmptyInput("cannot aggregate zero households"));
    }
    match mode {
        Aggregation::Pooled => Ok(eer_of(per_household.iter().flatten())?.eer),
        Aggregation::MeanPerHousehold => {
            let mut total = 0.0;
            for trials in per_household {
                total += eer(trials)?.eer;
            }
            Ok(total / per_household.len() as f64)
        }
    }
}

/// One tab-separated line per trial: household_id, trial_type, truth
/// (`-` for guests), predicted, s_max. Scores print with shortest
/// round-trip formatting, so parsing the dump restores them exactly.
pub fn trials_to_text(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let (trial_type, truth) = match &t.truth {
            TrialTruth::Enrolled(id) => ("enrolled", id.as_str()),
            TrialTruth::Guest => ("guest", "-"),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.household_id, trial_type, truth, t.predicted, t.s_max
        ));
    }
    out
}

pub fn trials_from_text(text: &str) -> Result<Vec<Trial>> {
    let mut trials = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [household_id, trial_type, truth, predicted, s_max] = fields.as_slice() else {
            return Err(Error::Format(format!(
                "trial line {}: expected 5 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        };
        let truth = match *trial_type {
            "enrolled" => TrialTruth::Enrolled((*truth).to_string()),
            "guest" => TrialTruth::Guest,
            other => {
                return Err(Error::Format(format!(
                    "trial line {}: unknown trial type '{other}'",
                    lineno + 1
                )))
            }
        };
        let s_max: f64 = s_max.parse().map_err(|e| {
            Error::Format(format!("trial line {}: bad score: {e}", lineno + 1))
        })?;
        trials.push(Trial {
            household_id: (*household_id).to_string(),
            truth,
            predicted: (*predicted).to_string(),
            s_max,
        });
    }
    Ok(trials)
}

/// Rank-1 baseline identification agrees with raw cosine because the score
/// map c ↦ (c + 1) / 2 is strictly increasing.
pub fn cosine_rank1(profiles: &[SpeakerProfile], test: &EmbeddingVector) -> Result<String> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("cannot identify against zero profiles"));
    }
    let mut best: Option<(String, f64)> = None;
    for p in profiles {
        let c = cosine_similarity(&p.embedding, test)?;
        let better = match &best {
            None => true,
            Some((bid, bs)) => c > *bs || (c == *bs && p.speaker_id < *bid),
        };
        if better {
            best = Some((p.speaker_id.clone(), c));
        }
    }
    Ok(best.expect("non-empty profiles").0)
}
