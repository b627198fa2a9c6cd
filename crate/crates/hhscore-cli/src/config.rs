//! Layered configuration: TOML file, then command-line overrides, producing a
//! fully resolved config that is echoed into every report for provenance.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use hhscore::eval::Aggregation;
use hhscore::experiment::{ExperimentConfig, Hardness, ScoringMode};
use hhscore::pairs::LabelDraw;
use hhscore::sim::{SplitSpec, SyntheticConfig};
use hhscore::trainer::{MaskResample, Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Baseline,
    LocalOnly,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HardnessName {
    Random,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskResampleName {
    PerPair,
    PerBatch,
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AggregationName {
    Pooled,
    MeanPerHousehold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LabelDrawName {
    AmongAll,
    AmongOthers,
}

/// `[corpus]`: synthetic corpus generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub dimension: usize,
    pub identity_subspace_dim: usize,
    pub within_speaker_noise: f64,
    pub household_nuisance_scale: f64,
    pub nuisance_group_size: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            speakers: d.speaker_count,
            utterances_per_speaker: d.utterances_per_speaker,
            dimension: d.dimension,
            identity_subspace_dim: d.identity_subspace_dim,
            within_speaker_noise: d.within_speaker_noise,
            household_nuisance_scale: d.household_nuisance_scale,
            nuisance_group_size: d.nuisance_group_size,
            seed: d.seed,
        }
    }
}

impl CorpusSection {
    pub fn to_synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            speaker_count: self.speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            dimension: self.dimension,
            identity_subspace_dim: self.identity_subspace_dim,
            within_speaker_noise: self.within_speaker_noise,
            household_nuisance_scale: self.household_nuisance_scale,
            nuisance_group_size: self.nuisance_group_size,
            seed: self.seed,
        }
    }
}

/// `[experiment]`: household construction, scoring modes, and aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub household_size: usize,
    pub household_count: usize,
    pub hardness: HardnessName,
    pub percentile: f64,
    pub adapted_dim: usize,
    pub label_error_rate: f64,
    pub label_draw: LabelDrawName,
    pub modes: Vec<ModeName>,
    pub guest_negative_cap: Option<usize>,
    pub shared_model: bool,
    pub aggregation: AggregationName,
    pub seed: u64,
    pub similarity_sample_budget: usize,
    pub speaker_level_m: usize,
    pub clique_restarts: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            household_size: d.household_size,
            household_count: d.household_count,
            hardness: HardnessName::Random,
            percentile: 98.0,
            adapted_dim: d.adapted_dim,
            label_error_rate: d.label_error_rate,
            label_draw: LabelDrawName::AmongOthers,
            modes: vec![ModeName::Baseline, ModeName::Fused],
            guest_negative_cap: d.guest_negative_cap,
            shared_model: d.shared_model,
            aggregation: AggregationName::Pooled,
            seed: d.seed,
            similarity_sample_budget: d.similarity_sample_budget,
            speaker_level_m: d.speaker_level_m,
            clique_restarts: d.clique_restarts,
        }
    }
}

/// `[split]`: per-member utterance budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub enroll_per_member: usize,
    pub eval_per_member: usize,
    pub max_train_per_member: usize,
    pub guest_count: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self {
            enroll_per_member: d.enroll_per_member,
            eval_per_member: d.eval_per_member,
            max_train_per_member: d.max_train_per_member,
            guest_count: d.guest_count,
        }
    }
}

impl SplitSection {
    pub fn to_split(&self) -> SplitSpec {
        SplitSpec {
            enroll_per_member: self.enroll_per_member,
            eval_per_member: self.eval_per_member,
            max_train_per_member: self.max_train_per_member,
            guest_count: self.guest_count,
        }
    }
}

/// `[train]`: optimizer recipe for the per-household models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub optimizer: OptimizerName,
    pub seed: u64,
    pub distance_epsilon: f64,
    pub mask_resample: MaskResampleName,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            dropout_rate: d.dropout_rate,
            optimizer: OptimizerName::Sgd,
            seed: d.seed,
            distance_epsilon: d.distance_epsilon,
            mask_resample: MaskResampleName::PerPair,
        }
    }
}

impl TrainSection {
    pub fn to_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            dropout_rate: self.dropout_rate,
            optimizer: match self.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd,
                OptimizerName::Adam => Optimizer::Adam,
            },
            seed: self.seed,
            distance_epsilon: self.distance_epsilon,
            mask_resample: match self.mask_resample {
                MaskResampleName::PerPair => MaskResample::PerPair,
                MaskResampleName::PerBatch => MaskResample::PerBatch,
                MaskResampleName::PerEpoch => MaskResample::PerEpoch,
            },
            freeze_global_weight: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dropout,
    Epsilon,
    HouseholdSize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dropout => "dropout",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::HouseholdSize => "household_size",
        }
    }
}

/// `[sweep]`: axis and values for the `sweep` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Whole config file; every field has a default so an empty file is valid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub corpus: CorpusSection,
    pub experiment: ExperimentSection,
    pub split: SplitSection,
    pub train: TrainSection,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Scoring modes to train, in file order with `baseline` (always reported)
    /// and duplicates removed.
    pub fn trained_modes(&self) -> Vec<ScoringMode> {
        let mut out = Vec::new();
        for mode in &self.experiment.modes {
            let mapped = match mode {
                ModeName::Baseline => continue,
                ModeName::LocalOnly => ScoringMode::LocalOnly,
                ModeName::Fused => ScoringMode::Fused,
            };
            if !out.contains(&mapped) {
                out.push(mapped);
            }
        }
        out
    }

    pub fn to_experiment(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            household_size: e.household_size,
            household_count: e.household_count,
            hardness: match e.hardness {
                HardnessName::Random => Hardness::Random,
                HardnessName::Hard => Hardness::Hard { percentile: e.percentile },
            },
            split: self.split.to_split(),
            train: self.train.to_train(),
            adapted_dim: e.adapted_dim,
            label_error_rate: e.label_error_rate,
            label_draw: match e.label_draw {
                LabelDrawName::AmongAll => LabelDraw::AmongAll,
                LabelDrawName::AmongOthers => LabelDraw::AmongOthers,
            },
            modes: self.trained_modes(),
            guest_negative_cap: e.guest_negative_cap,
            shared_model: e.shared_model,
            aggregation: match e.aggregation {
                AggregationName::Pooled => Aggregation::Pooled,
                AggregationName::MeanPerHousehold => Aggregation::MeanPerHousehold,
            },
            seed: e.seed,
            similarity_sample_budget: e.similarity_sample_budget,
            speaker_level_m: e.speaker_level_m,
            clique_restarts: e.clique_restarts,
        }
    }

    /// Resolved config as TOML, written verbatim to `resolved_config.toml` and
    /// echoed as `#`-prefixed lines at the top of every report.
    pub fn resolved_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).map_err(|e| anyhow::anyhow!("serializing config: {e}"))
    }
}
