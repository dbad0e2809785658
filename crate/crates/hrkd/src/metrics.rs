//! Per-step metrics records (line-delimited JSON) and the run report.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use hrkd_core::losses::LossBreakdown;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One self-contained record per optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub losses: LossBreakdown,
    /// Domain-relational ratio rows `r[m][d]`; uniform rows when ablated,
    /// empty in base mode.
    pub ratios: Vec<Vec<f64>>,
    /// Reference-prototype attention rows per layer, `alpha_d[m][i][j]`;
    /// empty when the mechanism is ablated.
    pub alpha_d: Vec<Vec<Vec<f64>>>,
    /// Hierarchical similarity vectors per domain and layer,
    /// `alpha_h[d][m]` of length `m + 1`; empty when ablated.
    pub alpha_h: Vec<Vec<Vec<f64>>>,
    /// Per-domain dev accuracy, present on epoch-final steps.
    pub dev_accuracy: Option<Vec<f64>>,
}

pub struct MetricsWriter {
    out: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            out: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| HarnessError::Format(format!("metrics encode: {e}")))?;
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a whole metrics file; a corrupt line reports its record index.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Format(format!(
                "{}: corrupt metrics record {idx}: {e}",
                path.display()
            ))
        })?;
        records.push(record);
    }
    Ok(records)
}

/// End-of-run summary written next to the metrics file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub first_total_loss: f64,
    pub final_total_loss: f64,
    /// Largest deviation from 1 of any audited probability-row sum
    /// (attention rows, ratio rows, both alpha families) over the whole run.
    pub max_row_sum_dev: f64,
    /// Number of rows that audit covered.
    pub rows_audited: u64,
    pub final_dev_accuracy: Vec<f64>,
}

// ── report ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct FileReport {
    pub file: String,
    pub steps: usize,
    pub first_total_loss: f64,
    pub final_total_loss: f64,
    pub final_dev_accuracy: Option<Vec<f64>>,
    pub final_dev_macro: Option<f64>,
    pub last_ratios: Vec<Vec<f64>>,
    pub last_alpha_h: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub files: Vec<FileReport>,
}

fn fmt_row(row: &[f64]) -> String {
    let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
    format!("[{}]", cells.join(", "))
}

pub fn build_report(paths: &[std::path::PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(HarnessError::Config("report needs at least one metrics file".into()));
    }
    let mut files = Vec::new();
    for path in paths {
        let records = read_metrics(path)?;
        let name = path.display().to_string();
        if records.is_empty() {
            files.push(FileReport {
                file: name,
                steps: 0,
                first_total_loss: f64::NAN,
                final_total_loss: f64::NAN,
                final_dev_accuracy: None,
                final_dev_macro: None,
                last_ratios: Vec::new(),
                last_alpha_h: Vec::new(),
            });
            continue;
        }
        let last = records.last().unwrap();
        let last_dev = records
            .iter()
            .rev()
            .find_map(|r| r.dev_accuracy.clone());
        let macro_avg = last_dev
            .as_ref()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64);
        files.push(FileReport {
            file: name,
            steps: records.len(),
            first_total_loss: records[0].losses.total,
            final_total_loss: last.losses.total,
            final_dev_accuracy: last_dev,
            final_dev_macro: macro_avg,
            last_ratios: last.ratios.clone(),
            last_alpha_h: last.alpha_h.clone(),
        });
    }
    Ok(Report { files })
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&format!("== {}\n", f.file));
            if f.steps == 0 {
                out.push_str("   no data (0 steps)\n");
                continue;
            }
            out.push_str(&format!(
                "   steps: {}   total loss: {:.4} -> {:.4}\n",
                f.steps, f.first_total_loss, f.final_total_loss
            ));
            match (&f.final_dev_accuracy, f.final_dev_macro) {
                (Some(acc), Some(avg)) => {
                    let cells: Vec<String> = acc.iter().map(|v| format!("{v:.3}")).collect();
                    out.push_str(&format!(
                        "   dev accuracy: [{}]  macro {avg:.3}\n",
                        cells.join(", ")
                    ));
                }
                _ => out.push_str("   dev accuracy: not recorded\n"),
            }
            if !f.last_ratios.is_empty() {
                out.push_str("   domain-relational ratios (last step):\n");
                for (m, row) in f.last_ratios.iter().enumerate() {
                    out.push_str(&format!("     layer {m}: {}\n", fmt_row(row)));
                }
            }
            let has_alpha_h = f.last_alpha_h.iter().flatten().any(|v| !v.is_empty());
            if has_alpha_h {
                out.push_str("   hierarchical similarity ratios (last step):\n");
                for (d, per_layer) in f.last_alpha_h.iter().enumerate() {
                    let cells: Vec<String> = per_layer
                        .iter()
                        .filter(|v| !v.is_empty())
                        .map(|v| fmt_row(v))
                        .collect();
                    out.push_str(&format!("     domain {d}: {}\n", cells.join(", ")));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
