use biasprobe::stereoset::{evaluate, DetectionResult};
use biasprobe::BiasReport;
use serde::Serialize;

use crate::config::{Format, Provenance, RunConfig};
use crate::error::CliResult;
use crate::output::{name_value_csv, to_json, write_output};

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub provenance: Provenance,
    pub report: BiasReport,
    pub results: Vec<DetectionResult>,
}

/// The CSV form drops per-instance results and keeps one metric per row.
#[derive(Serialize)]
struct CsvView<'a> {
    provenance: &'a Provenance,
    report: &'a BiasReport,
}

pub fn build_report(config: &RunConfig) -> CliResult<EvaluateReport> {
    let dataset = config.dataset()?;
    let backend = config.backend()?;
    config.check_capabilities(backend.as_ref())?;
    let detect = config.detect_config()?;
    let eval = evaluate(&dataset, backend.as_ref(), &detect).map_err(|e| match &config.args.dataset {
        Some(p) => e.context(format!("--dataset {}", p.display())),
        None => e,
    })?;
    Ok(EvaluateReport {
        provenance: config.provenance("evaluate"),
        report: eval.report,
        results: eval.results,
    })
}

pub fn run(config: &RunConfig) -> CliResult<()> {
    let report = build_report(config)?;
    let bytes = match config.args.format {
        Format::Json => to_json(&report),
        Format::Csv => name_value_csv(&CsvView {
            provenance: &report.provenance,
            report: &report.report,
        }),
    };
    write_output(config.args.out.as_deref(), &bytes)
}
