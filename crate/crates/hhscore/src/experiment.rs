//! End-to-end experiment harness: sample households from a corpus, train a
//! scoring model per household (or one shared model), evaluate every mode on
//! the same trials as the cosine baseline, and aggregate EERs.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{aggregate_eer, evaluate_household, Aggregation, Scorer, Trial};
use crate::model::HouseholdScoringModel;
use crate::pairs::{build_pairs, corrupt_labels, LabelDraw, LabeledUtterance, TrainingPairSet};
use crate::seed::derive_seed;
use crate::sim::corpus::Corpus;
use crate::sim::household::{
    generate_hard_households, generate_random_households, speaker_level_embeddings,
    similarity_threshold, Household, SplitSpec,
};
use crate::trainer::{train, LossReport, TrainConfig};

pub const STREAM_RANDOM_HOUSEHOLDS: u64 = 1;
pub const STREAM_THRESHOLD: u64 = 2;
pub const STREAM_LEVELS: u64 = 3;
pub const STREAM_HARD_HOUSEHOLDS: u64 = 4;
pub const STREAM_CORRUPT: u64 = 10_000_000;
pub const STREAM_PAIRS: u64 = 20_000_000;
pub const STREAM_INIT: u64 = 40_000_000;
pub const STREAM_TRAIN: u64 = 60_000_000;
const MODE_STRIDE: u64 = 1_000_000;

/// How member speakers are sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hardness {
    Random,
    /// Members form cliques above the similarity percentile threshold.
    Hard { percentile: f64 },
}

/// Trained scoring variants; the untrained cosine baseline is always
/// evaluated alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringMode {
    /// Adapted-distance score alone: global fusion weight initialized to
    /// zero and frozen, so the fused output is monotone in the local score.
    LocalOnly,
    /// Full fusion of cosine and adapted distance.
    Fused,
}

impl ScoringMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScoringMode::LocalOnly => "local_only",
            ScoringMode::Fused => "fused",
        }
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub household_size: usize,
    pub household_count: usize,
    pub hardness: Hardness,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub adapted_dim: usize,
    /// Fraction of member training utterances whose label is re-drawn.
    pub label_error_rate: f64,
    pub label_draw: LabelDraw,
    pub modes: Vec<ScoringMode>,
    pub guest_negative_cap: Option<usize>,
    /// Train one model on the union of all households' pairs instead of one
    /// model per household.
    pub shared_model: bool,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Pair-sample budget for the similarity percentile estimate.
    pub similarity_sample_budget: usize,
    /// Utterances averaged into each speaker-level embedding.
    pub speaker_level_m: usize,
    /// Restart budget per hard household during clique search.
    pub clique_restarts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            household_size: 2,
            household_count: 10,
            hardness: Hardness::Random,
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            adapted_dim: 16,
            label_error_rate: 0.0,
            label_draw: LabelDraw::AmongOthers,
            modes: vec![ScoringMode::Fused],
            guest_negative_cap: None,
            shared_model: false,
            aggregation: Aggregation::Pooled,
            seed: 0,
            similarity_sample_budget: 1_000_000,
            speaker_level_m: 20,
            clique_restarts: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.train.validate()?;
        if self.household_count == 0 {
            return Err(Error::Config("household count must be positive".into()));
        }
        if self.adapted_dim == 0 {
            return Err(Error::Config("adapted dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_error_rate) {
            return Err(Error::Config(format!(
                "label error rate must be in [0, 1], got {}",
                self.label_error_rate
            )));
        }
        if self.speaker_level_m == 0 {
            return Err(Error::Config("speaker-level sample count must be positive".into()));
        }
        if let Hardness::Hard { percentile } = self.hardness {
            if !(0.0..=100.0).contains(&percentile) {
                return Err(Error::Config(format!(
                    "percentile must be in [0, 100], got {percentile}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one scoring mode across all households.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub mode: ScoringMode,
    pub eer: f64,
    /// `1 - eer / baseline_eer`; absent when the baseline EER is zero.
    pub relative_improvement: Option<f64>,
    /// Trials per household, aligned with the household list.
    pub trials: Vec<Vec<Trial>>,
    /// `(owner, model)`: one entry per household, or a single `"shared"`
    /// entry when a shared model is trained.
    pub models: Vec<(String, HouseholdScoringModel)>,
    pub losses: Vec<(String, LossReport)>,
}

/// Outcome of a full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub households: Vec<Household>,
    /// Similarity threshold used for hard-household cliques.
    pub hard_threshold: Option<f64>,
    pub baseline_eer: f64,
    pub baseline_trials: Vec<Vec<Trial>>,
    pub modes: Vec<ModeResult>,
    pub aggregation: Aggregation,
}

fn with_household<T>(id: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Household { id: id.to_string(), inner: Box::new(e) })
}

fn init_model(
    mode: ScoringMode,
    input_dim: usize,
    adapted_dim: usize,
    seed: u64,
) -> Result<HouseholdScoringModel> {
    let model = HouseholdScoringModel::init(input_dim, adapted_dim, seed)?;
    match mode {
        ScoringMode::Fused => Ok(model),
        ScoringMode::LocalOnly => HouseholdScoringModel::from_parts(
            input_dim,
            model.layers().to_vec(),
            0.0,
            model.fusion_local_weight(),
            model.fusion_bias(),
        ),
    }
}

fn mode_train_config(mode: ScoringMode, base: &TrainConfig, seed: u64) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    if mode == ScoringMode::LocalOnly {
        cfg.freeze_global_weight = true;
    }
    cfg
}

fn household_pairs(
    corpus: &Corpus,
    household: &Household,
    cfg: &ExperimentConfig,
    index: u64,
) -> Result<TrainingPairSet> {
    let mut members = Vec::new();
    for member in &household.members {
        for utterance_id in &member.train {
            members.push(LabeledUtterance {
                utterance_id: utterance_id.clone(),
                speaker_label: member.speaker_id.clone(),
                embedding: corpus.embedding(&member.speaker_id, utterance_id)?.clone(),
            });
        }
    }
    if cfg.label_error_rate > 0.0 {
        let labels: Vec<String> =
            household.members.iter().map(|m| m.speaker_id.clone()).collect();
        members = corrupt_labels(
            &members,
            &labels,
            cfg.label_error_rate,
            cfg.label_draw,
            derive_seed(cfg.seed, STREAM_CORRUPT + index),
        )?;
    }
    let guests: Vec<LabeledUtterance> = household
        .guests
        .iter()
        .map(|g| {
            Ok(LabeledUtterance {
                utterance_id: g.utterance_id.clone(),
                speaker_label: g.speaker_id.clone(),
                embedding: corpus.embedding(&g.speaker_id, &g.utterance_id)?.clone(),
            })
        })
        .collect::<Result<_>>()?;
    build_pairs(
        &members,
        &guests,
        cfg.guest_negative_cap,
        derive_seed(cfg.seed, STREAM_PAIRS + index),
    )
}

/// Generates households per the config. Exposed so callers can materialize
/// the same worlds the experiment uses.
pub fn generate_households(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<(Vec<Household>, Option<f64>)> {
    match cfg.hardness {
        Hardness::Random => {
            let households = generate_random_households(
                corpus,
                cfg.household_size,
                cfg.household_count,
                &cfg.split,
                derive_seed(cfg.seed, STREAM_RANDOM_HOUSEHOLDS),
            )?;
            Ok((households, None))
        }
        Hardness::Hard { percentile } => {
            let threshold = similarity_threshold(
                corpus,
                percentile,
                cfg.similarity_sample_budget,
                derive_seed(cfg.seed, STREAM_THRESHOLD),
            )?;
            let levels = speaker_level_embeddings(
                corpus,
                cfg.speaker_level_m,
                derive_seed(cfg.seed, STREAM_LEVELS),
            )?;
            let households = generate_hard_households(
                corpus,
                &levels,
                cfg.household_size,
                cfg.household_count,
                threshold,
                &cfg.split,
                derive_seed(cfg.seed, STREAM_HARD_HOUSEHOLDS),
                cfg.clique_restarts,
            )?;
            Ok((households, Some(threshold)))
        }
    }
}

/// Runs the experiment: generate households, evaluate the baseline, then for
/// each scoring mode train on the households' pairs (with optional label
/// corruption) and evaluate on the identical trial protocol.
pub fn run_experiment(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (households, hard_threshold) = generate_households(corpus, cfg)?;

    let baseline_trials: Vec<Vec<Trial>> = households
        .par_iter()
        .map(|hh| {
            with_household(&hh.household_id, evaluate_household(Scorer::Baseline, hh, corpus))
        })
        .collect::<Result<_>>()?;
    let baseline_eer = aggregate_eer(&baseline_trials, cfg.aggregation)?;

    let pair_sets: Vec<TrainingPairSet> = if cfg.modes.is_empty() {
        Vec::new()
    } else {
        households
            .par_iter()
            .enumerate()
            .map(|(h, hh)| {
                with_household(&hh.household_id, household_pairs(corpus, hh, cfg, h as u64))
            })
            .collect::<Result<_>>()?
    };

    let mut modes = Vec::with_capacity(cfg.modes.len());
    for (mode_index, &mode) in cfg.modes.iter().enumerate() {
        let mode_stride = STREAM_INIT + mode_index as u64 * MODE_STRIDE;
        let train_stride = STREAM_TRAIN + mode_index as u64 * MODE_STRIDE;
        let mut models: Vec<(String, HouseholdScoringModel)>;
        let mut losses: Vec<(String, LossReport)>;
        let trials: Vec<Vec<Trial>>;

        if cfg.shared_model {
            let merged = TrainingPairSet::merge(pair_sets.clone())?;
            let init = init_model(
                mode,
                corpus.dimension(),
                cfg.adapted_dim,
                derive_seed(cfg.seed, mode_stride),
            )?;
            let train_cfg =
                mode_train_config(mode, &cfg.train, derive_seed(cfg.seed, train_stride));
            let (model, report) = train(init, &merged, &train_cfg)?;
            trials = households
                .par_iter()
                .map(|hh| {
                    with_household(
                        &hh.household_id,
                        evaluate_household(Scorer::Model(&model), hh, corpus),
                    )
                })
                .collect::<Result<_>>()?;
            models = vec![("shared".to_string(), model)];
            losses = vec![("shared".to_string(), report)];
        } else {
            let per_household: Vec<(HouseholdScoringModel, LossReport, Vec<Trial>)> =
                households
                    .par_iter()
                    .enumerate()
                    .map(|(h, hh)| {
                        with_household(&hh.household_id, || -> Result<_> {
                            let init = init_model(
                                mode,
                                corpus.dimension(),
                                cfg.adapted_dim,
                                derive_seed(cfg.seed, mode_stride + 1 + h as u64),
                            )?;
                            let train_cfg = mode_train_config(
                                mode,
                                &cfg.train,
                                derive_seed(cfg.seed, train_stride + 1 + h as u64),
                            );
                            let (model, report) = train(init, &pair_sets[h], &train_cfg)?;
                            let trials =
                                evaluate_household(Scorer::Model(&model), hh, corpus)?;
                            Ok((model, report, trials))
                        }())
                    })
                    .collect::<Result<_>>()?;
            models = Vec::with_capacity(per_household.len());
            losses = Vec::with_capacity(per_household.len());
            let mut collected = Vec::with_capacity(per_household.len());
            for (hh, (model, report, t)) in households.iter().zip(per_household) {
                models.push((hh.household_id.clone(), model));
                losses.push((hh.household_id.clone(), report));
                collected.push(t);
            }
            trials = collected;
        }

        let eer = aggregate_eer(&trials, cfg.aggregation)?;
        let relative_improvement =
            (baseline_eer > 0.0).then(|| 1.0 - eer / baseline_eer);
        modes.push(ModeResult { mode, eer, relative_improvement, trials, models, losses });
    }

    Ok(ExperimentResult {
        households,
        hard_threshold,
        baseline_eer,
        baseline_trials,
        modes,
        aggregation: cfg.aggregation,
    })
}

/// Per-utterance original and adapted embeddings of one household's corpus
/// slice, for external projection tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedExportRow {
    pub speaker_id: String,
    pub utterance_id: String,
    pub split: &'static str,
    pub original: Vec<f64>,
    pub adapted: Vec<f64>,
}

/// Computes adapted embeddings (no dropout) for every utterance referenced
/// by the household, labeled with its split.
pub fn export_adapted(
    model: &HouseholdScoringModel,
    household: &Household,
    corpus: &Corpus,
) -> Result<Vec<AdaptedExportRow>> {
    if model.input_dim() != corpus.dimension() {
        return Err(Error::Dimension {
            expected: corpus.dimension(),
            actual: model.input_dim(),
        });
    }
    let mut rows = Vec::new();
    let mut push = |speaker_id: &str, utterance_id: &str, split: &'static str| -> Result<()> {
        let e = corpus.embedding(speaker_id, utterance_id)?;
        rows.push(AdaptedExportRow {
            speaker_id: speaker_id.to_string(),
            utterance_id: utterance_id.to_string(),
            split,
            original: e.values().to_vec(),
            adapted: model.adapt(e.values())?,
        });
        Ok(())
    };
    for member in &household.members {
        for u in &member.enroll {
            push(&member.speaker_id, u, "enroll")?;
        }
        for u in &member.eval {
            push(&member.speaker_id, u, "eval")?;
        }
        for u in &member.train {
            push(&member.speaker_id, u, "train")?;
        }
    }
    for guest in &household.guests {
        push(&guest.speaker_id, &guest.utterance_id, "guest")?;
    }
    Ok(rows)
}

/// Convenience map from household id to its index in the result.
pub fn household_index(households: &[Household]) -> BTreeMap<&str, usize> {
    households
        .iter()
        .enumerate()
        .map(|(i, hh)| (hh.household_id.as_str(), i))
        .collect()
}
