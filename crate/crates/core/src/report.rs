//! Evaluation reports.
//!
//! A report has one row per prompt variant and one column per MME task or
//! MM-Vet capability (plus a `total` column for graded benchmarks). When the
//! base variant is part of a multi-variant run, every other row carries the
//! relative improvement over it, printed as `87.54(+19.4%)`.
//!
//! Reports hold only values that are a function of the inputs, so repeated
//! runs serialize to identical bytes. Timing and cache statistics live in
//! [`RunStats`](crate::pipeline::RunStats) and are written to a separate file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ReportFormat;
use crate::ingest::BenchmarkKind;
use crate::prompt::PromptVariant;
use crate::scoring::{
    format_improvement, pct_improvement, score_mme_task, score_mmvet, score_mmvet_total, EvalRecord, ScoringError,
    TaskScore,
};
use crate::text::round_half_up;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TABLE: &str = "report.txt";
pub const RECORDS_FILE: &str = "records.jsonl";

pub const TOTAL_COLUMN: &str = "total";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode report {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: PromptVariant,
    pub label: String,
    pub n_records: usize,
    pub n_errors: usize,
    /// Headline score per column.
    pub scores: BTreeMap<String, f64>,
    /// MME detail per task; empty for graded benchmarks.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tasks: BTreeMap<String, TaskScore>,
    /// Percent change against the base row, per column. Absent on the base
    /// row itself and when the report has no improvement column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: BenchmarkKind,
    pub model_name: String,
    pub config_hash: String,
    pub base_variant: Option<PromptVariant>,
    pub has_improvement: bool,
    pub n_samples: usize,
    pub columns: Vec<String>,
    pub rows: Vec<VariantRow>,
}

impl EvalReport {
    pub fn row(&self, variant: PromptVariant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Headline score of `variant` in `column`.
    pub fn score(&self, variant: PromptVariant, column: &str) -> Option<f64> {
        self.row(variant)?.scores.get(column).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["model".to_string(), "variant".to_string()];
        for col in &self.columns {
            header.push(csv_field(col));
            if self.has_improvement {
                header.push(csv_field(&format!("{col}_improvement")));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![csv_field(&row.label), row.variant.as_str().to_string()];
            for col in &self.columns {
                fields.push(row.scores.get(col).map(|s| self.format_score(*s)).unwrap_or_default());
                if self.has_improvement {
                    let delta = row.improvement.as_ref().and_then(|m| m.get(col));
                    fields.push(delta.map(|d| format!("{d:.1}")).unwrap_or_default());
                }
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain-text table, one row per variant.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.columns.iter().cloned());
        let mut grid = vec![header];
        for row in &self.rows {
            let mut line = vec![row.label.clone()];
            for col in &self.columns {
                let cell = match row.scores.get(col) {
                    None => "-".to_string(),
                    Some(score) => {
                        let mut cell = self.format_score(*score);
                        if let Some(delta) = row.improvement.as_ref().and_then(|m| m.get(col)) {
                            let _ = write!(cell, "({})", format_improvement(*delta));
                        }
                        cell
                    }
                };
                line.push(cell);
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
                out.push_str(&"-".repeat(rule));
                out.push('\n');
            }
        }
        out
    }

    fn format_score(&self, score: f64) -> String {
        if self.benchmark.is_yes_no() {
            format!("{score:.2}")
        } else {
            format!("{score:.1}")
        }
    }
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn round_task(s: TaskScore) -> TaskScore {
    TaskScore {
        accuracy: round_half_up(s.accuracy, 2),
        accuracy_plus: round_half_up(s.accuracy_plus, 2),
        combined: round_half_up(s.combined, 2),
        ..s
    }
}

/// Inputs to [`build_report`] besides the records.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub benchmark: BenchmarkKind,
    pub model_name: String,
    pub config_hash: String,
    pub base_variant: Option<PromptVariant>,
    pub n_samples: usize,
}

/// Scores `records` per variant. `variants` fixes the row order.
pub fn build_report(
    meta: ReportMeta,
    variants: &[PromptVariant],
    records: &[EvalRecord],
) -> Result<EvalReport, ReportError> {
    let yes_no = meta.benchmark.is_yes_no();
    let columns: Vec<String> = if yes_no {
        records.iter().map(|r| r.task.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        let caps: BTreeSet<String> = records.iter().flat_map(|r| r.capabilities.iter().cloned()).collect();
        let mut cols: Vec<String> = caps.into_iter().filter(|c| c != TOTAL_COLUMN).collect();
        if !records.is_empty() {
            cols.push(TOTAL_COLUMN.to_string());
        }
        cols
    };

    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mine: Vec<EvalRecord> = records.iter().filter(|r| r.variant == variant).cloned().collect();
        let mut scores = BTreeMap::new();
        let mut tasks = BTreeMap::new();
        if yes_no {
            for task in &columns {
                let of_task: Vec<EvalRecord> = mine.iter().filter(|r| &r.task == task).cloned().collect();
                let score = round_task(score_mme_task(&of_task)?);
                scores.insert(task.clone(), score.combined);
                tasks.insert(task.clone(), score);
            }
        } else {
            for col in &columns {
                let score = if col == TOTAL_COLUMN {
                    score_mmvet_total(&mine)
                } else {
                    score_mmvet(&mine, col)
                };
                match score {
                    Ok(s) => {
                        scores.insert(col.clone(), round_half_up(s, 1));
                    }
                    Err(ScoringError::EmptyCapability(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        rows.push(VariantRow {
            variant,
            label: format!("{}{}", meta.model_name, variant.row_suffix()),
            n_records: mine.len(),
            n_errors: mine.iter().filter(|r| r.error.is_some()).count(),
            scores,
            tasks,
            improvement: None,
        });
    }

    let has_improvement = rows.len() > 1 && meta.base_variant.is_some_and(|b| variants.contains(&b));
    if has_improvement {
        let base_variant = meta.base_variant.expect("checked above");
        let base = rows
            .iter()
            .find(|r| r.variant == base_variant)
            .map(|r| r.scores.clone())
            .unwrap_or_default();
        for row in rows.iter_mut().filter(|r| r.variant != base_variant) {
            let deltas = row
                .scores
                .iter()
                .filter_map(|(col, new)| {
                    let base = base.get(col)?;
                    pct_improvement(*new, *base).ok().map(|d| (col.clone(), d))
                })
                .collect();
            row.improvement = Some(deltas);
        }
    }

    Ok(EvalReport {
        benchmark: meta.benchmark,
        model_name: meta.model_name,
        config_hash: meta.config_hash,
        base_variant: meta.base_variant,
        has_improvement,
        n_samples: meta.n_samples,
        columns,
        rows,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the requested formats into `dir`. Returns the files written.
pub fn emit_report(report: &EvalReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let formats: BTreeSet<ReportFormat> = formats.iter().copied().collect();
    for format in formats {
        let (name, body) = match format {
            ReportFormat::Json => (REPORT_JSON, report.to_json()),
            ReportFormat::Csv => (REPORT_CSV, report.to_csv()),
            ReportFormat::Table => (REPORT_TABLE, report.to_table()),
        };
        let path = dir.join(name);
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}

/// One JSON line per record, in the given order.
pub fn write_records(records: &[EvalRecord], path: &Path) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| ReportError::Decode {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
