//! Command-line front end for the household scoring library: corpus
//! generation, experiment runs, axis sweeps, embedding exports, and EER
//! recomputation from trial dumps. Every command is deterministic given its
//! config; all randomness is seed-derived.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hhscore::eval::{aggregate_eer, eer_of, trials_from_text, Aggregation, Trial};
use hhscore::experiment::{run_experiment, ExperimentResult};
use hhscore::model::HouseholdScoringModel;
use hhscore::sim::{generate_synthetic_corpus, load_households, Corpus, Household};

use config::{
    AggregationName, Config, HardnessName, MaskResampleName, ModeName, OptimizerName, SweepAxis,
    SweepSection,
};
use report::{config_echo, fmt_f64, results_rows, results_table, ResultRow};

#[derive(Parser)]
#[command(name = "hhscore-cli", version, about = "Household-adapted speaker scoring experiments")]
struct Cli {
    /// Worker threads for household-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding corpus.
    GenCorpus(GenCorpusArgs),
    /// Run one experiment: households, training, evaluation, report files.
    Run(RunArgs),
    /// Repeat an experiment across one axis; emit a long-format table.
    Sweep(SweepArgs),
    /// Export original and adapted embeddings for one household.
    ExportAdapted(ExportAdaptedArgs),
    /// Recompute EER from a trial dump.
    Eer(EerArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// TOML config file; its [corpus] section seeds the generator.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path for the corpus file.
    #[arg(long)]
    out: PathBuf,
    /// File format to write.
    #[arg(long, value_enum, default_value = "binary")]
    format: CorpusFormat,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances_per_speaker: Option<usize>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    identity_subspace_dim: Option<usize>,
    #[arg(long)]
    within_speaker_noise: Option<f64>,
    #[arg(long)]
    household_nuisance_scale: Option<f64>,
    #[arg(long)]
    nuisance_group_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CorpusFormat {
    Binary,
    Text,
}

/// Experiment settings shared by `run` and `sweep`; every flag overrides the
/// corresponding config-file value.
#[derive(Args)]
struct ExperimentOverrides {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file (binary, or text if the extension is .txt/.tsv/.text).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory for report and model files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    household_size: Option<usize>,
    #[arg(long)]
    household_count: Option<usize>,
    #[arg(long, value_enum)]
    hardness: Option<HardnessName>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    adapted_dim: Option<usize>,
    /// Training label corruption rate.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Scoring modes to report (repeatable); replaces the config-file list.
    #[arg(long = "mode", value_enum)]
    modes: Vec<ModeName>,
    #[arg(long)]
    guest_negative_cap: Option<usize>,
    /// Train one model on all households' pairs instead of one per household.
    #[arg(long)]
    shared_model: bool,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationName>,
    /// Experiment seed; all per-household randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerName>,
    #[arg(long, value_enum)]
    mask_resample: Option<MaskResampleName>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: ExperimentOverrides,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: ExperimentOverrides,
    /// Axis to sweep; overrides the config [sweep] section.
    #[arg(long, value_enum)]
    axis: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct ExportAdaptedArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Corpus the household was built from.
    #[arg(long)]
    corpus: PathBuf,
    /// Household manifest (JSON) written by `run`.
    #[arg(long)]
    households: PathBuf,
    /// Household to export; defaults to the only one in the manifest.
    #[arg(long)]
    household_id: Option<String>,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EerArgs {
    /// Trial dump written by `run` (lines starting with # are skipped).
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, value_enum, default_value = "pooled")]
    aggregation: AggregationName,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    if let Err(err) = dispatch(cli.command) {
        match err.downcast_ref::<hhscore::Error>() {
            Some(lib) => eprintln!("error [{}]: {err:#}", module_of(lib)),
            None => eprintln!("error: {err:#}"),
        }
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenCorpus(args) => cmd_gen_corpus(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportAdapted(args) => cmd_export_adapted(args),
        Command::Eer(args) => cmd_eer(args),
    }
}

/// Library module responsible for an error, for the exit diagnostic.
fn module_of(err: &hhscore::Error) -> &'static str {
    use hhscore::Error::*;
    match err {
        Household { inner, .. } => module_of(inner),
        Normalization | Dimension { .. } | EmptyInput(_) => "embedding",
        AdaptedDim { .. } => "model",
        Data(_) | Config(_) => "config",
        DegenerateHousehold(_) | SpeakerTooSmall { .. } | GuestPoolEmpty | CliqueSearch { .. } => {
            "household simulation"
        }
        NotFound(_) => "corpus",
        Numerical(_) => "trainer",
        DegenerateTrialSet(_) => "evaluation",
        Format(_) => "file format",
        Io(_) => "io",
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_corpus(path: &Path) -> anyhow::Result<Corpus> {
    let text = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("txt" | "tsv" | "text")
    );
    let corpus =
        if text { Corpus::load_text(path) } else { Corpus::load_binary(path) };
    Ok(corpus.with_context(|| format!("loading corpus {}", path.display()))?)
}

fn apply_overrides(cfg: &mut Config, o: &ExperimentOverrides) {
    if let Some(p) = &o.corpus {
        cfg.corpus_path = Some(p.clone());
    }
    if let Some(p) = &o.out_dir {
        cfg.out_dir = Some(p.clone());
    }
    let e = &mut cfg.experiment;
    if let Some(v) = o.household_size {
        e.household_size = v;
    }
    if let Some(v) = o.household_count {
        e.household_count = v;
    }
    if let Some(v) = o.hardness {
        e.hardness = v;
    }
    if let Some(v) = o.percentile {
        e.percentile = v;
    }
    if let Some(v) = o.adapted_dim {
        e.adapted_dim = v;
    }
    if let Some(v) = o.epsilon {
        e.label_error_rate = v;
    }
    if !o.modes.is_empty() {
        e.modes = o.modes.clone();
    }
    if let Some(v) = o.guest_negative_cap {
        e.guest_negative_cap = Some(v);
    }
    if o.shared_model {
        e.shared_model = true;
    }
    if let Some(v) = o.aggregation {
        e.aggregation = v;
    }
    if let Some(v) = o.seed {
        e.seed = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.dropout {
        t.dropout_rate = v;
    }
    if let Some(v) = o.optimizer {
        t.optimizer = v;
    }
    if let Some(v) = o.mask_resample {
        t.mask_resample = v;
    }
}

fn required_corpus_path(cfg: &Config) -> anyhow::Result<PathBuf> {
    cfg.corpus_path.clone().ok_or_else(|| {
        anyhow::Error::from(hhscore::Error::Config(
            "corpus path required: set corpus_path in the config file or pass --corpus".into(),
        ))
    })
}

fn required_out_dir(cfg: &Config) -> anyhow::Result<PathBuf> {
    cfg.out_dir.clone().ok_or_else(|| {
        anyhow::Error::from(hhscore::Error::Config(
            "output directory required: set out_dir in the config file or pass --out-dir".into(),
        ))
    })
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config)?;
    let c = &mut cfg.corpus;
    if let Some(v) = args.speakers {
        c.speakers = v;
    }
    if let Some(v) = args.utterances_per_speaker {
        c.utterances_per_speaker = v;
    }
    if let Some(v) = args.dimension {
        c.dimension = v;
    }
    if let Some(v) = args.identity_subspace_dim {
        c.identity_subspace_dim = v;
    }
    if let Some(v) = args.within_speaker_noise {
        c.within_speaker_noise = v;
    }
    if let Some(v) = args.household_nuisance_scale {
        c.household_nuisance_scale = v;
    }
    if let Some(v) = args.nuisance_group_size {
        c.nuisance_group_size = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }

    let corpus = generate_synthetic_corpus(&cfg.corpus.to_synthetic())
        .context("generating corpus")?;
    match args.format {
        CorpusFormat::Binary => corpus.save_binary(&args.out),
        CorpusFormat::Text => corpus.save_text(&args.out),
    }
    .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "corpus: {} speakers, {} utterances, dimension {} -> {}",
        corpus.speaker_count(),
        corpus.utterance_count(),
        corpus.dimension(),
        args.out.display()
    );
    Ok(())
}

/// Writes the per-run artifacts shared by `run` (everything) and `sweep`
/// (models and dumps per axis value go in subdirectories).
fn write_run_artifacts(
    dir: &Path,
    echo: &str,
    cfg: &Config,
    result: &ExperimentResult,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir.join("models"))
        .with_context(|| format!("creating {}", dir.join("models").display()))?;

    let manifest = hhscore::sim::households_to_json(&result.households)
        .context("encoding household manifest")?;
    report::write_file(&dir.join("households.json"), &manifest)?;

    report::write_file(
        &dir.join("trials_baseline.tsv"),
        &report::trials_report(echo, &result.baseline_trials),
    )?;
    for m in &result.modes {
        let name = m.mode.name();
        report::write_file(
            &dir.join(format!("trials_{name}.tsv")),
            &report::trials_report(echo, &m.trials),
        )?;
        report::write_file(
            &dir.join(format!("curves_{name}.tsv")),
            &report::curves_report(echo, &m.losses),
        )?;
        for (owner, model) in &m.models {
            let path = dir.join("models").join(report::model_file_name(owner, m.mode));
            model.save(&path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    report::write_file(
        &dir.join("results.tsv"),
        &results_table(
            echo,
            &results_rows(
                result,
                cfg.experiment.household_size,
                cfg.train.dropout_rate,
                cfg.experiment.label_error_rate,
            ),
        ),
    )?;
    Ok(())
}

fn print_summary(cfg: &Config, result: &ExperimentResult) {
    if let Some(t) = result.hard_threshold {
        println!("hard-household similarity threshold: {}", fmt_f64(t));
    }
    println!(
        "households: {} of size {}; baseline eer {}",
        result.households.len(),
        cfg.experiment.household_size,
        fmt_f64(result.baseline_eer)
    );
    for m in &result.modes {
        let imp = m
            .relative_improvement
            .map_or_else(|| "-".to_string(), |v| format!("{:.1}%", 100.0 * v));
        println!(
            "{:<10} eer {} improvement {}",
            m.mode.name(),
            fmt_f64(m.eer),
            imp
        );
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.overrides.config)?;
    apply_overrides(&mut cfg, &args.overrides);
    let corpus_path = required_corpus_path(&cfg)?;
    let out_dir = required_out_dir(&cfg)?;

    let exp = cfg.to_experiment();
    exp.validate().context("validating experiment config")?;
    let corpus = load_corpus(&corpus_path)?;

    let result = run_experiment(&corpus, &exp).context("running experiment")?;

    let resolved = cfg.resolved_toml()?;
    let echo = config_echo(&resolved);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    report::write_file(&out_dir.join("resolved_config.toml"), &resolved)?;
    write_run_artifacts(&out_dir, &echo, &cfg, &result)?;

    print_summary(&cfg, &result);
    println!("reports in {}", out_dir.display());
    Ok(())
}

fn apply_axis(cfg: &mut Config, axis: SweepAxis, value: f64) -> anyhow::Result<()> {
    match axis {
        SweepAxis::Dropout => cfg.train.dropout_rate = value,
        SweepAxis::Epsilon => cfg.experiment.label_error_rate = value,
        SweepAxis::HouseholdSize => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(hhscore::Error::Config(format!(
                    "household_size sweep values must be positive integers, got {value}"
                ))
                .into());
            }
            cfg.experiment.household_size = value as usize;
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.overrides.config)?;
    apply_overrides(&mut cfg, &args.overrides);
    let axis = args.axis.or(cfg.sweep.as_ref().map(|s| s.axis));
    let mut values = args.values.clone();
    if values.is_empty() {
        if let Some(s) = &cfg.sweep {
            values = s.values.clone();
        }
    }
    let Some(axis) = axis else {
        return Err(hhscore::Error::Config(
            "sweep requires an axis: pass --axis or set [sweep] axis in the config".into(),
        )
        .into());
    };
    if values.is_empty() {
        return Err(hhscore::Error::Config(
            "sweep requires at least one value: pass --values or set [sweep] values".into(),
        )
        .into());
    }
    cfg.sweep = Some(SweepSection { axis, values: values.clone() });

    let corpus_path = required_corpus_path(&cfg)?;
    let out_dir = required_out_dir(&cfg)?;
    let corpus = load_corpus(&corpus_path)?;

    let resolved = cfg.resolved_toml()?;
    let echo = config_echo(&resolved);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    report::write_file(&out_dir.join("resolved_config.toml"), &resolved)?;

    let mut rows: Vec<ResultRow> = Vec::new();
    for &value in &values {
        let mut point = cfg.clone();
        apply_axis(&mut point, axis, value)?;
        let exp = point.to_experiment();
        exp.validate()
            .with_context(|| format!("validating {} = {value}", axis.name()))?;
        let result = run_experiment(&corpus, &exp)
            .with_context(|| format!("running {} = {value}", axis.name()))?;
        println!("{} = {}", axis.name(), fmt_f64(value));
        print_summary(&point, &result);
        rows.extend(results_rows(
            &result,
            point.experiment.household_size,
            point.train.dropout_rate,
            point.experiment.label_error_rate,
        ));
    }
    report::write_file(&out_dir.join("sweep.tsv"), &results_table(&echo, &rows))?;
    println!("reports in {}", out_dir.display());
    Ok(())
}

fn find_household<'a>(
    households: &'a [Household],
    id: &Option<String>,
) -> anyhow::Result<&'a Household> {
    match id {
        Some(id) => households
            .iter()
            .find(|h| &h.household_id == id)
            .ok_or_else(|| {
                hhscore::Error::NotFound(format!("household '{id}' not in manifest")).into()
            }),
        None if households.len() == 1 => Ok(&households[0]),
        None => Err(hhscore::Error::Config(format!(
            "manifest has {} households; pass --household-id",
            households.len()
        ))
        .into()),
    }
}

fn cmd_export_adapted(args: ExportAdaptedArgs) -> anyhow::Result<()> {
    let model = HouseholdScoringModel::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let corpus = load_corpus(&args.corpus)?;
    let households = load_households(&args.households)
        .with_context(|| format!("loading manifest {}", args.households.display()))?;
    let household = find_household(&households, &args.household_id)?;

    let rows = hhscore::experiment::export_adapted(&model, household, &corpus)
        .with_context(|| format!("exporting household '{}'", household.household_id))?;

    let mut out = String::new();
    out.push_str(&format!("# model = {}\n", args.model.display()));
    out.push_str(&format!("# corpus = {}\n", args.corpus.display()));
    out.push_str(&format!("# household = {}\n", household.household_id));
    let (d, k) = match rows.first() {
        Some(r) => (r.original.len(), r.adapted.len()),
        None => (corpus.dimension(), 0),
    };
    out.push_str("speaker_id\tutterance_id\tsplit");
    for i in 0..d {
        out.push_str(&format!("\toriginal_{i}"));
    }
    for i in 0..k {
        out.push_str(&format!("\tadapted_{i}"));
    }
    out.push('\n');
    for r in &rows {
        out.push_str(&format!("{}\t{}\t{}", r.speaker_id, r.utterance_id, r.split));
        for v in &r.original {
            out.push_str(&format!("\t{}", fmt_f64(*v)));
        }
        for v in &r.adapted {
            out.push_str(&format!("\t{}", fmt_f64(*v)));
        }
        out.push('\n');
    }
    report::write_file(&args.out, &out)?;
    println!(
        "exported {} rows ({} original dims, {} adapted dims) -> {}",
        rows.len(),
        d,
        k,
        args.out.display()
    );
    Ok(())
}

fn cmd_eer(args: EerArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.trials)
        .with_context(|| format!("reading {}", args.trials.display()))?;
    let trials = trials_from_text(&text)
        .with_context(|| format!("parsing {}", args.trials.display()))?;

    let mut by_household: BTreeMap<&str, Vec<Trial>> = BTreeMap::new();
    for t in &trials {
        by_household.entry(&t.household_id).or_default().push(t.clone());
    }
    let per_household: Vec<Vec<Trial>> = by_household.into_values().collect();
    println!("trials: {} across {} households", trials.len(), per_household.len());

    match args.aggregation {
        AggregationName::Pooled => {
            let est = eer_of(&trials).context("computing pooled eer")?;
            println!("pooled eer: {}", fmt_f64(est.eer));
            println!(
                "threshold {} far {} fnir {}",
                fmt_f64(est.threshold),
                fmt_f64(est.far),
                fmt_f64(est.fnir)
            );
        }
        AggregationName::MeanPerHousehold => {
            let eer = aggregate_eer(&per_household, Aggregation::MeanPerHousehold)
                .context("computing mean per-household eer")?;
            println!("mean per-household eer: {}", fmt_f64(eer));
        }
    }
    Ok(())
}
