//! Tab-separated report files. Every report starts with the resolved config
//! echoed as `#`-prefixed comment lines, then a header row, then data rows.
//! Floats are written with Rust's shortest round-trip formatting so repeated
//! runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use hhscore::eval::Trial;
use hhscore::experiment::{ExperimentResult, ScoringMode};

/// Prefix every line of `config_toml` with `# `.
pub fn config_echo(config_toml: &str) -> String {
    let mut out = String::new();
    for line in config_toml.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
    out
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_improvement(imp: Option<f64>) -> String {
    match imp {
        Some(v) => fmt_f64(v),
        None => "-".to_string(),
    }
}

/// One row of the long-format results table.
pub struct ResultRow {
    pub household_size: usize,
    pub mode: String,
    pub dropout: Option<f64>,
    pub epsilon: Option<f64>,
    pub eer: f64,
    pub relative_improvement: Option<f64>,
}

pub const RESULTS_HEADER: &str =
    "household_size\tmode\tdropout\tepsilon\teer\trelative_improvement";

pub fn results_rows(
    result: &ExperimentResult,
    household_size: usize,
    dropout: f64,
    epsilon: f64,
) -> Vec<ResultRow> {
    let mut rows = vec![ResultRow {
        household_size,
        mode: "baseline".to_string(),
        dropout: None,
        epsilon: None,
        eer: result.baseline_eer,
        relative_improvement: None,
    }];
    for m in &result.modes {
        rows.push(ResultRow {
            household_size,
            mode: m.mode.name().to_string(),
            dropout: Some(dropout),
            epsilon: Some(epsilon),
            eer: m.eer,
            relative_improvement: m.relative_improvement,
        });
    }
    rows
}

pub fn results_table(echo: &str, rows: &[ResultRow]) -> String {
    let mut out = String::from(echo);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.household_size,
            r.mode,
            r.dropout.map_or_else(|| "-".to_string(), fmt_f64),
            r.epsilon.map_or_else(|| "-".to_string(), fmt_f64),
            fmt_f64(r.eer),
            fmt_improvement(r.relative_improvement),
        );
    }
    out
}

/// Trial dump for one mode across all households, readable by `eer`. The
/// column header is a comment line so the dump parses back without stripping.
pub fn trials_report(echo: &str, per_household: &[Vec<Trial>]) -> String {
    let mut out = String::from(echo);
    out.push_str("# household_id\ttrial_type\ttruth\tpredicted\ts_max\n");
    let flat: Vec<Trial> =
        per_household.iter().flat_map(|t| t.iter().cloned()).collect();
    out.push_str(&hhscore::eval::trials_to_text(&flat));
    out
}

/// Per-household training curves: one row per (household, epoch).
pub fn curves_report(echo: &str, losses: &[(String, hhscore::trainer::LossReport)]) -> String {
    let mut out = String::from(echo);
    out.push_str("household_id\tepoch\tmean_loss\n");
    for (owner, report) in losses {
        for (i, loss) in report.epoch_mean_losses.iter().enumerate() {
            let _ = writeln!(out, "{owner}\t{}\t{}", i + 1, fmt_f64(*loss));
        }
    }
    out
}

pub fn model_file_name(owner: &str, mode: ScoringMode) -> String {
    format!("{owner}_{}.hhsm", mode.name())
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}
