use std::fs;
use std::path::Path;

use super::harness::{AblationReport, AblationRow, MetricReport};
use super::metrics::MetricScores;
use crate::corpus::{write_jsonl, CorpusError};

pub const PLAN_TABLE_HEADER: [&str; 11] = [
    "Planning Method",
    "Model",
    "Self-history",
    "Instruction Tuning",
    "Cross-patient",
    "BLEU",
    "METEOR",
    "ROUGE1",
    "ROUGE2",
    "ROUGE_L",
    "Bertscore_F1",
];

pub const ASSESSMENT_TABLE_HEADER: [&str; 10] = [
    "Model",
    "Self-history",
    "Instruction Tuning",
    "Cross-patient",
    "BLEU",
    "METEOR",
    "ROUGE1",
    "ROUGE2",
    "ROUGE_L",
    "Bertscore_F1",
];

fn mark(flag: bool) -> String {
    if flag { "✓".into() } else { String::new() }
}

/// Six decimals, or empty cells when nothing was scored.
fn metric_cells(report: &MetricReport) -> Vec<String> {
    match report.mean {
        Some(m) => MetricScores::as_array(&m).iter().map(|v| format!("{v:.6}")).collect(),
        None => vec![String::new(); 6],
    }
}

fn flag_cells(row: &AblationRow) -> Vec<String> {
    vec![
        row.config.provider_tag.clone(),
        mark(row.config.use_self_history),
        mark(row.config.instruction_tuned),
        mark(row.config.use_cross_patient),
    ]
}

fn to_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Plan-quality table, one row per config.
pub fn plan_table_csv(report: &AblationReport) -> String {
    to_csv(
        &PLAN_TABLE_HEADER,
        report.rows.iter().map(|row| {
            let mut cells = vec![row.config.planning_method.label().to_string()];
            cells.extend(flag_cells(row));
            cells.extend(metric_cells(&row.plan));
            cells
        }),
    )
}

/// Assessment-quality table, two-stage configs only.
pub fn assessment_table_csv(report: &AblationReport) -> String {
    to_csv(
        &ASSESSMENT_TABLE_HEADER,
        report.rows.iter().filter_map(|row| {
            let a = row.assessment.as_ref()?;
            let mut cells = flag_cells(row);
            cells.extend(metric_cells(a));
            Some(cells)
        }),
    )
}

pub fn report_json(report: &AblationReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Writes `plan_table.csv`, `assessment_table.csv`, `report.json` and one
/// `predictions/<slug>.jsonl` per config into `dir`.
pub fn write_report(report: &AblationReport, dir: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir.join("predictions")).map_err(io_err)?;
    fs::write(dir.join("plan_table.csv"), plan_table_csv(report)).map_err(io_err)?;
    fs::write(dir.join("assessment_table.csv"), assessment_table_csv(report)).map_err(io_err)?;
    fs::write(dir.join("report.json"), report_json(report) + "\n").map_err(io_err)?;
    for (slug, preds) in report.predictions() {
        write_jsonl(preds, &dir.join("predictions").join(format!("{slug}.jsonl")))?;
    }
    Ok(())
}
