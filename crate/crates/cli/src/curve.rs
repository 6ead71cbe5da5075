use std::path::{Path, PathBuf};

use biasprobe::model::tokenize;
use biasprobe::stereoset::alignment_curve;
use biasprobe::stereoset::GoldLabel;
use biasprobe::{AlignmentBin, Text};
use serde::{Deserialize, Serialize};

use crate::config::{Format, Provenance, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{csv_bytes, to_json, write_output};

/// One line of a pairs file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub provenance: Provenance,
    /// `builtin`, a dataset path, or a pairs-file path.
    pub pairs_source: String,
    pub pair_count: usize,
    pub bins: Vec<AlignmentBin>,
}

pub fn load_pairs(path: &Path) -> CliResult<Vec<(Text, Text)>> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read --pairs {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("--pairs {} line {}", path.display(), i + 1);
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| CliError::data(format!("{}: {e}", where_())))?;
        let a = tokenize(&rec.a).map_err(|e| CliError::data(format!("{}: field a: {e}", where_())))?;
        let b = tokenize(&rec.b).map_err(|e| CliError::data(format!("{}: field b: {e}", where_())))?;
        pairs.push((a, b));
    }
    Ok(pairs)
}

fn dataset_pairs(config: &RunConfig) -> CliResult<Vec<(Text, Text)>> {
    Ok(config
        .dataset()?
        .instances
        .iter()
        .map(|inst| {
            (
                inst.options[inst.option_index(GoldLabel::Stereotype)].text.clone(),
                inst.options[inst.option_index(GoldLabel::AntiStereotype)].text.clone(),
            )
        })
        .collect())
}

pub fn build_report(config: &RunConfig, pairs_file: Option<&Path>) -> CliResult<CurveReport> {
    let (pairs, source) = match pairs_file {
        Some(p) => (load_pairs(p)?, p.display().to_string()),
        None => (dataset_pairs(config)?, config.provenance("curve").config.dataset),
    };
    if pairs.is_empty() {
        return Err(CliError::data(format!("no pairs in {source}")));
    }
    let backend = config.backend()?;
    let pack = config.lexicon()?;
    let bins = alignment_curve(&pairs, backend.as_ref(), config.args.delta, config.args.bins, &pack)?;
    Ok(CurveReport {
        provenance: config.provenance("curve"),
        pairs_source: source,
        pair_count: pairs.len(),
        bins,
    })
}

/// Two columns for plotting; empty bins leave the rate blank.
pub fn curve_csv(bins: &[AlignmentBin]) -> Vec<u8> {
    csv_bytes(
        &["midpoint", "conflict_rate"],
        bins.iter().map(|b| {
            [
                b.midpoint.to_string(),
                b.conflict_rate.map(|r| r.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

/// Where the plot CSV goes alongside a JSON report.
pub fn csv_sibling(out: &Path) -> Option<PathBuf> {
    let p = out.with_extension("csv");
    (p != out).then_some(p)
}

pub fn run(config: &RunConfig, pairs_file: Option<&Path>) -> CliResult<()> {
    let report = build_report(config, pairs_file)?;
    let out = config.args.out.as_deref();
    match config.args.format {
        Format::Csv => write_output(out, &curve_csv(&report.bins)),
        Format::Json => {
            if let Some(path) = out {
                let sibling = csv_sibling(path).ok_or_else(|| {
                    CliError::config(format!(
                        "--out {} would be overwritten by the plot CSV; use another extension or --format csv",
                        path.display()
                    ))
                })?;
                write_output(Some(path), &to_json(&report))?;
                write_output(Some(&sibling), &curve_csv(&report.bins))
            } else {
                write_output(None, &to_json(&report))
            }
        }
    }
}
