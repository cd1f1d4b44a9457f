//! Batch concordance: screen a list of bivariate datasets, run MSSET and
//! Egger's test on each, and cross-tabulate the decisions.
//!
//! Manifest: one dataset per line, `path` or `path,format`; relative paths
//! resolve against the manifest's directory; `#` starts a comment. Without a
//! format the layout is read from the header.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::experiment::egger_outcome;
use crate::io::{parse_dataset, parse_dataset_auto, DataFormat};
use crate::model::MetaDataset;
use crate::msset::{run_msset, MssetOptions};
use crate::univariate::bonferroni_combine;

pub const MIN_BATCH_STUDIES: usize = 10;

pub const DECISION_HEADER: [&str; 12] = [
    "dataset",
    "status",
    "reason",
    "n_studies",
    "msset_p",
    "egger1_p",
    "egger2_p",
    "egger_bonferroni_p",
    "msset_reject",
    "egger1_reject",
    "egger2_reject",
    "egger_bonferroni_reject",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: Option<DataFormat>,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| MetaError::InvalidInput(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (file, format) = match line.split_once(',') {
            Some((f, fmt)) => (f.trim(), Some(fmt.trim().parse::<DataFormat>().map_err(|e| MetaError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?)),
            None => (line, None),
        };
        let p = Path::new(file);
        entries.push(ManifestEntry {
            path: if p.is_absolute() { p.to_path_buf() } else { base.join(p) },
            format,
        });
    }
    if entries.is_empty() {
        return Err(MetaError::InvalidInput(format!("manifest {} lists no datasets", path.display())));
    }
    Ok(entries)
}

/// Screening rules, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Criterion {
    /// At least ten studies.
    A,
    /// Exactly two outcomes.
    B,
    /// At least one study reports both outcomes.
    C,
}

impl Criterion {
    pub fn reason(self) -> &'static str {
        match self {
            Criterion::A => "criterion (a)",
            Criterion::B => "criterion (b)",
            Criterion::C => "criterion (c)",
        }
    }
}

pub fn screen(data: &MetaDataset) -> Option<Criterion> {
    if data.n_studies() < MIN_BATCH_STUDIES {
        Some(Criterion::A)
    } else if data.n_outcomes() != 2 {
        Some(Criterion::B)
    } else if !data.studies.iter().any(|s| s.reports(0) && s.reports(1)) {
        Some(Criterion::C)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decisions {
    pub msset_p: f64,
    pub egger_p: [f64; 2],
    pub egger_bonferroni_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Analyzed(Decisions),
    /// Failed screening.
    Skipped { reason: String },
    /// Could not be read, or a test failed on it.
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetEntry {
    pub dataset: String,
    pub n_studies: Option<usize>,
    pub outcome: Outcome,
}

/// 2×2 counts indexed `[msset rejects][comparator rejects]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceTable {
    pub comparator: String,
    pub alpha: f64,
    pub counts: [[u64; 2]; 2],
}

impl ConcordanceTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
    pub fn msset_positive(&self) -> u64 {
        self.counts[1].iter().sum()
    }
    pub fn comparator_positive(&self) -> u64 {
        self.counts[0][1] + self.counts[1][1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchResult {
    pub alpha: f64,
    pub entries: Vec<DatasetEntry>,
    pub tables: Vec<ConcordanceTable>,
}

impl BatchResult {
    pub fn analyzed(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.outcome, Outcome::Analyzed(_)))
            .count()
    }
}

fn decide(data: &MetaDataset, options: &MssetOptions) -> Result<Decisions> {
    let msset = run_msset(data, options)?;
    let e1 = egger_outcome(data, 0, false).map_err(|e| e.in_outcome("egger", data.label(0)))?;
    let e2 = egger_outcome(data, 1, false).map_err(|e| e.in_outcome("egger", data.label(1)))?;
    let bonf = bonferroni_combine(&[e1.clone(), e2.clone()])?;
    Ok(Decisions {
        msset_p: msset.p_value,
        egger_p: [e1.p_value, e2.p_value],
        egger_bonferroni_p: bonf.p_value,
    })
}

fn evaluate(name: String, data: Result<MetaDataset>, options: &MssetOptions) -> DatasetEntry {
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            return DatasetEntry {
                dataset: name,
                n_studies: None,
                outcome: Outcome::Failed { reason: e.to_string() },
            }
        }
    };
    let outcome = match screen(&data) {
        Some(c) => Outcome::Skipped {
            reason: c.reason().to_owned(),
        },
        None => match decide(&data, options) {
            Ok(d) => Outcome::Analyzed(d),
            Err(e) => Outcome::Failed { reason: e.to_string() },
        },
    };
    DatasetEntry {
        dataset: name,
        n_studies: Some(data.n_studies()),
        outcome,
    }
}

/// Tabulate already-loaded datasets. Order of `datasets` is kept.
pub fn concordance_from_datasets(
    datasets: Vec<(String, Result<MetaDataset>)>,
    alpha: f64,
    options: &MssetOptions,
) -> Result<BatchResult> {
    if datasets.is_empty() {
        return Err(MetaError::InvalidInput("no datasets to analyze".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetaError::InvalidInput(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let entries: Vec<DatasetEntry> = datasets
        .into_par_iter()
        .map(|(name, d)| evaluate(name, d, options))
        .collect();
    let mut tables: Vec<ConcordanceTable> = ["egger1", "egger2", "egger-bonferroni"]
        .iter()
        .map(|c| ConcordanceTable {
            comparator: (*c).to_owned(),
            alpha,
            counts: [[0; 2]; 2],
        })
        .collect();
    for e in &entries {
        if let Outcome::Analyzed(d) = &e.outcome {
            let m = usize::from(d.msset_p <= alpha);
            for (t, p) in tables.iter_mut().zip([d.egger_p[0], d.egger_p[1], d.egger_bonferroni_p]) {
                t.counts[m][usize::from(p <= alpha)] += 1;
            }
        }
    }
    Ok(BatchResult { alpha, entries, tables })
}

pub fn batch_concordance(manifest_path: impl AsRef<Path>, alpha: f64, options: &MssetOptions) -> Result<BatchResult> {
    let entries = read_manifest(manifest_path)?;
    let datasets = entries
        .into_par_iter()
        .map(|e| {
            let data = match e.format {
                Some(f) => parse_dataset(&e.path, f),
                None => parse_dataset_auto(&e.path),
            };
            (e.path.display().to_string(), data)
        })
        .collect();
    concordance_from_datasets(datasets, alpha, options)
}

fn io_err(e: impl std::fmt::Display) -> MetaError {
    MetaError::InvalidInput(format!("write failed: {e}"))
}

pub fn write_decisions<W: Write>(result: &BatchResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DECISION_HEADER).map_err(io_err)?;
    let a = result.alpha;
    for e in &result.entries {
        let n = e.n_studies.map(|n| n.to_string()).unwrap_or_default();
        let rec: Vec<String> = match &e.outcome {
            Outcome::Analyzed(d) => {
                let ps = [d.msset_p, d.egger_p[0], d.egger_p[1], d.egger_bonferroni_p];
                let mut r = vec![e.dataset.clone(), "analyzed".into(), String::new(), n];
                r.extend(ps.iter().map(|p| p.to_string()));
                r.extend(ps.iter().map(|p| (*p <= a).to_string()));
                r
            }
            Outcome::Skipped { reason } | Outcome::Failed { reason } => {
                let status = if matches!(e.outcome, Outcome::Skipped { .. }) { "skipped" } else { "failed" };
                let mut r = vec![e.dataset.clone(), status.into(), reason.clone(), n];
                r.extend(std::iter::repeat_n(String::new(), 8));
                r
            }
        };
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Long-form tables: `comparator,msset_reject,comparator_reject,count`.
pub fn write_tables<W: Write>(result: &BatchResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["comparator", "msset_reject", "comparator_reject", "count"])
        .map_err(io_err)?;
    for t in &result.tables {
        for (i, row) in t.counts.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                w.write_record([t.comparator.clone(), (i == 1).to_string(), (k == 1).to_string(), c.to_string()])
                    .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn render_tables(result: &BatchResult) -> String {
    let mut out = format!(
        "analyzed {} of {} datasets (alpha = {})\n",
        result.analyzed(),
        result.entries.len(),
        result.alpha
    );
    for t in &result.tables {
        out.push_str(&format!(
            "\nMSSET vs {}\n{:<14}{:>10}{:>10}\n{:<14}{:>10}{:>10}\n{:<14}{:>10}{:>10}\n",
            t.comparator,
            "",
            "cmp -",
            "cmp +",
            "MSSET -",
            t.counts[0][0],
            t.counts[0][1],
            "MSSET +",
            t.counts[1][0],
            t.counts[1][1],
        ));
    }
    for e in &result.entries {
        if let Outcome::Skipped { reason } | Outcome::Failed { reason } = &e.outcome {
            out.push_str(&format!("skipped {}: {reason}\n", e.dataset));
        }
    }
    out
}
