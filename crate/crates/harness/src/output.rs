//! CSV records, JSON summaries and the files a sweep writes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::{summarize, ExperimentRecord, RunFailure, SummaryRow, SweepOutcome};
use crate::plot::render_svg;
use crate::HarnessError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Header written for every CSV, including empty ones.
pub const CSV_HEADER: [&str; 10] =
    ["env", "algo", "model", "c", "budget", "seed", "subopt", "steps", "comparisons", "wall_ms"];

pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(HarnessError::Csv(format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    records_from_csv(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub schema_version: u32,
    pub name: String,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn write_csv(path: &Path, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    write(path, &records_to_csv(records)?)
}

pub fn write_summary(path: &Path, name: &str, outcome: &SweepOutcome) -> Result<(), HarnessError> {
    let file = SummaryFile {
        schema_version: SUMMARY_SCHEMA_VERSION,
        name: name.into(),
        rows: outcome.summary.clone(),
        failures: outcome.failures.clone(),
    };
    write(path, &serde_json::to_string_pretty(&file)?)
}

pub fn read_summary(path: &Path) -> Result<SummaryFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_plot(path: &Path, summary: &[SummaryRow]) -> Result<(), HarnessError> {
    write(path, &render_svg(summary))
}

/// Renders the plot for the records stored in `csv_path`.
pub fn plot_csv(csv_path: &Path, svg_path: &Path) -> Result<(), HarnessError> {
    write_plot(svg_path, &summarize(&read_csv(csv_path)?))
}

/// Writes whichever outputs are configured.
pub fn emit_outputs(config: &crate::config::ExperimentConfig, outcome: &SweepOutcome) -> Result<(), HarnessError> {
    if let Some(p) = &config.output.csv {
        write_csv(p, &outcome.records)?;
    }
    if let Some(p) = &config.output.summary {
        write_summary(p, &config.name, outcome)?;
    }
    if let Some(p) = &config.output.plot {
        write_plot(p, &outcome.summary)?;
    }
    Ok(())
}
