//! CSV ingestion and emission (wide, long and 2×2-count layouts) and funnel
//! data export.
//!
//! Parsing checks structure row by row and reports the offending line. The
//! per-outcome minimum study count is not enforced here: it belongs to the
//! tests, so a two-study file still parses.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::heterogeneity::{dl_fit_variances, outcome_columns};
use crate::model::{validate_dataset, MetaDataset, OutcomeMeasurement, StudyRecord, TwoByTwo, ValidationReport, Violation};

pub const LONG_HEADER: [&str; 4] = ["study_id", "outcome", "y", "s"];
pub const COUNTS_HEADER: [&str; 6] = ["study_id", "outcome", "a", "b", "c", "d"];
pub const FUNNEL_HEADER: [&str; 5] = ["effect", "stderr", "pooled_estimate", "ci_low_bound", "ci_high_bound"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `study_id,y1,s1,y2,s2,...`; empty cells mark unreported outcomes.
    Wide,
    /// `study_id,outcome,y,s`, one row per reported outcome.
    Long,
    /// `study_id,outcome,a,b,c,d`, one 2×2 table per reported outcome.
    Counts,
}

impl DataFormat {
    pub fn name(self) -> &'static str {
        match self {
            DataFormat::Wide => "wide",
            DataFormat::Long => "long",
            DataFormat::Counts => "counts",
        }
    }

    /// Recognize the layout from a header row.
    pub fn detect(header: &[&str]) -> Option<Self> {
        if header == LONG_HEADER {
            Some(DataFormat::Long)
        } else if header == COUNTS_HEADER {
            Some(DataFormat::Counts)
        } else if wide_outcomes(header).is_some() {
            Some(DataFormat::Wide)
        } else {
            None
        }
    }
}

impl FromStr for DataFormat {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wide" => Ok(DataFormat::Wide),
            "long" => Ok(DataFormat::Long),
            "counts" => Ok(DataFormat::Counts),
            other => Err(MetaError::InvalidInput(format!("unknown data format '{other}'"))),
        }
    }
}

/// Number of outcomes declared by a wide header, if it is one.
fn wide_outcomes(header: &[&str]) -> Option<usize> {
    if header.len() < 3 || header[0] != "study_id" || header.len() % 2 != 1 {
        return None;
    }
    let j = (header.len() - 1) / 2;
    for k in 1..=j {
        if header[2 * k - 1] != format!("y{k}") || header[2 * k] != format!("s{k}") {
            return None;
        }
    }
    Some(j)
}

fn parse_err(line: usize, message: impl Into<String>) -> MetaError {
    MetaError::Parse {
        line,
        message: message.into(),
    }
}

fn number(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("column {name}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column {name}: value {field} is not finite")));
    }
    Ok(v)
}

fn measurement(y: f64, s: f64, line: usize) -> Result<OutcomeMeasurement> {
    if s <= 0.0 {
        return Err(parse_err(line, format!("standard error {s} must be positive")));
    }
    OutcomeMeasurement::new(y, s).map_err(|e| parse_err(line, e.to_string()))
}

fn count(field: &str, name: &str, line: usize) -> Result<f64> {
    let v = number(field, name, line)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(parse_err(line, format!("column {name}: count {field} must be a nonnegative integer")));
    }
    Ok(v)
}

/// Log odds ratio and Woolf standard error, with the 0.5 correction when a cell is zero.
pub fn measurement_from_counts(table: &TwoByTwo) -> Result<OutcomeMeasurement> {
    table.check(0)?;
    let used = if table.has_zero_cell() { table.corrected() } else { *table };
    OutcomeMeasurement::new(used.log_odds_ratio(), used.naive_variance().sqrt())
}

type Row = (usize, Vec<String>);
type StudyCells = (Vec<Option<OutcomeMeasurement>>, Vec<Option<TwoByTwo>>);

fn read_rows<R: Read>(reader: R) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

/// Check the header row against the requested layout.
fn check_header(rows: &[Row], format: DataFormat) -> Result<()> {
    let Some((line, header)) = rows.first() else {
        return Err(parse_err(1, "empty file (no header row)"));
    };
    let fields: Vec<&str> = header.iter().map(String::as_str).collect();
    match DataFormat::detect(&fields) {
        Some(found) if found == format => Ok(()),
        Some(found) => Err(parse_err(
            *line,
            format!("header is {} format but {} was requested", found.name(), format.name()),
        )),
        None => Err(parse_err(
            *line,
            format!("header '{}' does not match the {} format", header.join(","), format.name()),
        )),
    }
}

/// Parse CSV text in the given layout. Structural problems (bad header,
/// wrong field count, non-numeric or nonpositive values, duplicate rows)
/// are reported with their line number; the returned dataset passes every
/// validation check except the per-outcome study minimum.
pub fn parse_dataset_from<R: Read>(reader: R, format: DataFormat) -> Result<MetaDataset> {
    let rows = read_rows(reader)?;
    check_header(&rows, format)?;
    let data = match format {
        DataFormat::Wide => parse_wide(&rows)?,
        DataFormat::Long => parse_keyed(&rows, false)?,
        DataFormat::Counts => parse_keyed(&rows, true)?,
    };
    structural_check(&data)?;
    Ok(data)
}

pub fn parse_dataset_str(text: &str, format: DataFormat) -> Result<MetaDataset> {
    parse_dataset_from(text.as_bytes(), format)
}

pub fn parse_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<MetaDataset> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| MetaError::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    parse_dataset_from(file, format)
}

/// Read the header to pick the layout, then parse.
pub fn parse_dataset_auto(path: impl AsRef<Path>) -> Result<MetaDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| MetaError::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let rows = read_rows(text.as_bytes())?;
    let Some((line, header)) = rows.first() else {
        return Err(parse_err(1, "empty file (no header row)"));
    };
    let fields: Vec<&str> = header.iter().map(String::as_str).collect();
    let format = DataFormat::detect(&fields)
        .ok_or_else(|| parse_err(*line, format!("unrecognized header '{}'", header.join(","))))?;
    parse_dataset_str(&text, format)
}

fn structural_check(data: &MetaDataset) -> Result<()> {
    let violations: Vec<Violation> = validate_dataset(data)
        .violations
        .into_iter()
        .filter(|v| !matches!(v, Violation::TooFewStudies { .. }))
        .collect();
    ValidationReport { violations }.into_result()
}

fn parse_wide(rows: &[Row]) -> Result<MetaDataset> {
    let header: Vec<&str> = rows[0].1.iter().map(String::as_str).collect();
    let j = wide_outcomes(&header).expect("header checked");
    let mut seen = HashMap::new();
    let mut studies = Vec::new();
    for (line, row) in &rows[1..] {
        let line = *line;
        if row.len() != 2 * j + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", 2 * j + 1, row.len())));
        }
        let id = &row[0];
        if id.is_empty() {
            return Err(parse_err(line, "empty study_id"));
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(parse_err(line, format!("duplicate study_id '{id}' (first on line {first})")));
        }
        let mut measurements = Vec::with_capacity(j);
        for k in 0..j {
            let (y, s) = (&row[2 * k + 1], &row[2 * k + 2]);
            measurements.push(match (y.is_empty(), s.is_empty()) {
                (true, true) => None,
                (false, false) => Some(measurement(
                    number(y, &format!("y{}", k + 1), line)?,
                    number(s, &format!("s{}", k + 1), line)?,
                    line,
                )?),
                _ => {
                    return Err(parse_err(
                        line,
                        format!("outcome {}: effect and standard error must both be given or both be empty", k + 1),
                    ))
                }
            });
        }
        if measurements.iter().all(Option::is_none) {
            return Err(parse_err(line, format!("study '{id}' reports no outcome")));
        }
        studies.push(StudyRecord::new(id.clone(), measurements));
    }
    Ok(MetaDataset::new(studies, MetaDataset::default_labels(j)))
}

/// Outcome keys that are all positive integers are read as 1-based indices;
/// otherwise they are labels, ordered by first appearance.
fn outcome_labels(keys: &[&str]) -> (Vec<String>, HashMap<String, usize>) {
    let indices: Option<Vec<usize>> = keys
        .iter()
        .map(|k| k.parse::<usize>().ok().filter(|&v| v >= 1 && !k.starts_with('0')))
        .collect();
    let mut map = HashMap::new();
    match indices {
        Some(idx) if !idx.is_empty() => {
            let j = *idx.iter().max().unwrap();
            for (k, v) in keys.iter().zip(&idx) {
                map.insert((*k).to_owned(), v - 1);
            }
            (MetaDataset::default_labels(j), map)
        }
        _ => {
            let mut labels = Vec::new();
            for k in keys {
                if !map.contains_key(*k) {
                    map.insert((*k).to_owned(), labels.len());
                    labels.push((*k).to_owned());
                }
            }
            (labels, map)
        }
    }
}

fn parse_keyed(rows: &[Row], counts: bool) -> Result<MetaDataset> {
    let width = if counts { 6 } else { 4 };
    for (line, row) in &rows[1..] {
        if row.len() != width {
            return Err(parse_err(*line, format!("expected {width} fields, found {}", row.len())));
        }
        if row[0].is_empty() {
            return Err(parse_err(*line, "empty study_id"));
        }
        if row[1].is_empty() {
            return Err(parse_err(*line, "empty outcome"));
        }
    }
    let keys: Vec<&str> = rows[1..].iter().map(|(_, r)| r[1].as_str()).collect();
    let (labels, outcome_index) = outcome_labels(&keys);
    let j = labels.len();

    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, StudyCells> = HashMap::new();
    let mut first_line: HashMap<(String, usize), usize> = HashMap::new();
    for (line, row) in &rows[1..] {
        let line = *line;
        let id = &row[0];
        let k = outcome_index[&row[1]];
        if let Some(first) = first_line.insert((id.clone(), k), line) {
            return Err(parse_err(
                line,
                format!("duplicate row for study '{id}', outcome '{}' (first on line {first})", row[1]),
            ));
        }
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (vec![None; j], if counts { vec![None; j] } else { Vec::new() })
        });
        if counts {
            let table = TwoByTwo::new(
                count(&row[2], "a", line)?,
                count(&row[3], "b", line)?,
                count(&row[4], "c", line)?,
                count(&row[5], "d", line)?,
            );
            entry.0[k] = Some(measurement_from_counts(&table).map_err(|e| parse_err(line, e.to_string()))?);
            entry.1[k] = Some(table);
        } else {
            entry.0[k] = Some(measurement(number(&row[2], "y", line)?, number(&row[3], "s", line)?, line)?);
        }
    }
    let studies = order
        .into_iter()
        .map(|id| {
            let (m, c) = by_id.remove(&id).expect("recorded id");
            StudyRecord::new(id, m).with_counts(c)
        })
        .collect();
    Ok(MetaDataset::new(studies, labels))
}

/// Attach 2×2 counts (from a counts-format dataset) to matching studies and
/// outcomes of `data`. Outcomes are matched by label, studies by id.
pub fn merge_counts(data: &mut MetaDataset, counts: &MetaDataset) -> Result<()> {
    let j = data.n_outcomes();
    let positions: HashMap<&str, usize> = data
        .studies
        .iter()
        .enumerate()
        .map(|(i, s)| (s.study_id.as_str(), i))
        .collect();
    let mut updates = Vec::new();
    for study in &counts.studies {
        let &i = positions
            .get(study.study_id.as_str())
            .ok_or_else(|| MetaError::InvalidInput(format!("counts for unknown study '{}'", study.study_id)))?;
        for (k, table) in study.counts.iter().enumerate() {
            let Some(table) = table else { continue };
            let label = counts.label(k);
            let target = data
                .outcome_labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| MetaError::InvalidInput(format!("counts for unknown outcome '{label}'")))?;
            if !data.studies[i].reports(target) {
                return Err(MetaError::InvalidInput(format!(
                    "study '{}' has counts but no effect for outcome '{label}'",
                    study.study_id
                )));
            }
            updates.push((i, target, *table));
        }
    }
    for (i, target, table) in updates {
        let study = &mut data.studies[i];
        if study.counts.len() != j {
            study.counts = vec![None; j];
        }
        study.counts[target] = Some(table);
    }
    Ok(())
}

/// Indices of outcomes for which every reporting study carries counts.
pub fn outcomes_with_counts(data: &MetaDataset) -> Vec<usize> {
    (0..data.n_outcomes())
        .filter(|&j| {
            let idx = data.reporting_index(j);
            !idx.is_empty() && idx.iter().all(|&i| data.studies[i].counts_for(j).is_some())
        })
        .collect()
}

fn io_err(e: impl std::fmt::Display) -> MetaError {
    MetaError::InvalidInput(format!("write failed: {e}"))
}

/// Write `data` in the given layout. Numbers use the shortest decimal form
/// that parses back to the same `f64`. Long and counts layouts write outcome
/// keys as labels, or as 1-based indices when the labels are the defaults.
pub fn write_dataset<W: Write>(data: &MetaDataset, format: DataFormat, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    let j = data.n_outcomes();
    let default = data.outcome_labels == MetaDataset::default_labels(j);
    let key = |k: usize| if default { (k + 1).to_string() } else { data.label(k).to_owned() };
    match format {
        DataFormat::Wide => {
            let mut header = vec!["study_id".to_owned()];
            for k in 1..=j {
                header.push(format!("y{k}"));
                header.push(format!("s{k}"));
            }
            w.write_record(&header).map_err(io_err)?;
            for s in &data.studies {
                let mut rec = vec![s.study_id.clone()];
                for m in &s.measurements {
                    match m {
                        Some(m) => {
                            rec.push(m.effect.to_string());
                            rec.push(m.stderr.to_string());
                        }
                        None => rec.extend([String::new(), String::new()]),
                    }
                }
                w.write_record(&rec).map_err(io_err)?;
            }
        }
        DataFormat::Long => {
            w.write_record(LONG_HEADER).map_err(io_err)?;
            for s in &data.studies {
                for (k, m) in s.measurements.iter().enumerate() {
                    if let Some(m) = m {
                        w.write_record([s.study_id.clone(), key(k), m.effect.to_string(), m.stderr.to_string()])
                            .map_err(io_err)?;
                    }
                }
            }
        }
        DataFormat::Counts => {
            w.write_record(COUNTS_HEADER).map_err(io_err)?;
            for s in &data.studies {
                for k in 0..s.measurements.len() {
                    if !s.reports(k) {
                        continue;
                    }
                    let t = s.counts_for(k).ok_or_else(|| {
                        MetaError::InvalidInput(format!(
                            "study '{}' outcome '{}' has no counts to write",
                            s.study_id,
                            data.label(k)
                        ))
                    })?;
                    w.write_record([
                        s.study_id.clone(),
                        key(k),
                        t.a.to_string(),
                        t.b.to_string(),
                        t.c.to_string(),
                        t.d.to_string(),
                    ])
                    .map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn dataset_to_string(data: &MetaDataset, format: DataFormat) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(data, format, &mut buf)?;
    String::from_utf8(buf).map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunnelRow {
    pub effect: f64,
    pub stderr: f64,
    pub pooled_estimate: f64,
    pub ci_low_bound: f64,
    pub ci_high_bound: f64,
}

/// Funnel-plot data for one outcome: every reporting study with the
/// random-effects pooled estimate (DerSimonian–Laird τ̂²) and the pseudo 95%
/// limits `pooled ± 1.96·s` at that study's standard error.
pub fn funnel_rows(data: &MetaDataset, outcome: usize) -> Result<Vec<FunnelRow>> {
    if outcome >= data.n_outcomes() {
        return Err(MetaError::InvalidInput(format!(
            "outcome {} out of range (dataset has {})",
            outcome + 1,
            data.n_outcomes()
        )));
    }
    let cols = outcome_columns(data, outcome, false, true)?;
    let pooled = if cols.len() == 1 {
        cols.effects[0]
    } else {
        let tau2 = dl_fit_variances(&cols.effects, &cols.variances)?.tau2;
        let (num, den) = cols
            .effects
            .iter()
            .zip(&cols.variances)
            .fold((0.0, 0.0), |(n, d), (y, v)| (n + y / (v + tau2), d + 1.0 / (v + tau2)));
        num / den
    };
    Ok(cols
        .effects
        .iter()
        .zip(&cols.variances)
        .map(|(&effect, v)| {
            let stderr = v.sqrt();
            FunnelRow {
                effect,
                stderr,
                pooled_estimate: pooled,
                ci_low_bound: pooled - 1.96 * stderr,
                ci_high_bound: pooled + 1.96 * stderr,
            }
        })
        .collect())
}

pub fn write_funnel<W: Write>(rows: &[FunnelRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FUNNEL_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.effect.to_string(),
            r.stderr.to_string(),
            r.pooled_estimate.to_string(),
            r.ci_low_bound.to_string(),
            r.ci_high_bound.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn funnel_export(data: &MetaDataset, outcome: usize, out_path: impl AsRef<Path>) -> Result<Vec<FunnelRow>> {
    let rows = funnel_rows(data, outcome)?;
    let mut buf = Vec::new();
    write_funnel(&rows, &mut buf)?;
    std::fs::write(out_path.as_ref(), buf).map_err(io_err)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(y: f64, s: f64) -> Option<OutcomeMeasurement> {
        Some(OutcomeMeasurement::new(y, s).unwrap())
    }

    #[test]
    fn two_row_wide_file() {
        let d = parse_dataset_str("study_id,y1,s1,y2,s2\na,0.1,0.2,0.3,0.4\nb,-0.5,1,2,0.25\n", DataFormat::Wide).unwrap();
        assert_eq!(d.n_studies(), 2);
        assert_eq!(d.n_outcomes(), 2);
        assert!(d.studies.iter().all(|s| s.reported_count() == 2));
        assert_eq!(d.studies[1].measurements[0], m(-0.5, 1.0));
    }

    #[test]
    fn wide_empty_cells_are_unreported() {
        let d = parse_dataset_str("study_id,y1,s1,y2,s2\ns3,0.4,0.1,,\n", DataFormat::Wide).unwrap();
        assert_eq!(d.studies[0].study_id, "s3");
        assert!(d.studies[0].reports(0));
        assert!(!d.studies[0].reports(1));
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let cases = [
            "study_id,y1,s1\na,0.1,0.2\nb,x,0.2\n",
            "study_id,y1,s1\na,0.1,0.2\nb,0.1,0\n",
            "study_id,y1,s1\na,0.1,0.2\nb,0.1\n",
            "study_id,y1,s1\na,0.1,0.2\na,0.3,0.2\n",
            "study_id,y1,s1\na,0.1,0.2\nb,0.3,\n",
            "study_id,y1,s1\na,0.1,0.2\nb,inf,1\n",
        ];
        for text in cases {
            match parse_dataset_str(text, DataFormat::Wide) {
                Err(MetaError::Parse { line, .. }) => assert_eq!(line, 3, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn mixed_formats_rejected() {
        let long = "study_id,outcome,y,s\na,1,0.1,0.2\n";
        let err = parse_dataset_str(long, DataFormat::Wide).unwrap_err();
        assert!(matches!(err, MetaError::Parse { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("long"));
        assert!(parse_dataset_str("study_id,y1,s2\n", DataFormat::Wide).is_err());
        assert!(parse_dataset_str("", DataFormat::Long).is_err());
    }

    #[test]
    fn long_format_with_labels_and_indices() {
        let d = parse_dataset_str(
            "study_id,outcome,y,s\na,mortality,0.1,0.2\na,qol,0.3,0.4\nb,qol,0.5,0.6\n",
            DataFormat::Long,
        )
        .unwrap();
        assert_eq!(d.outcome_labels, vec!["mortality", "qol"]);
        assert!(!d.studies[1].reports(0));
        let d = parse_dataset_str("study_id,outcome,y,s\na,2,0.1,0.2\nb,1,0.3,0.4\n", DataFormat::Long).unwrap();
        assert_eq!(d.outcome_labels, MetaDataset::default_labels(2));
        assert_eq!(d.studies[0].measurements, vec![None, m(0.1, 0.2)]);
    }

    #[test]
    fn counts_derive_log_odds_ratio() {
        let d = parse_dataset_str("study_id,outcome,a,b,c,d\nx,1,10,20,5,40\ny,1,0,20,5,40\n", DataFormat::Counts).unwrap();
        let got = d.studies[0].measurements[0].unwrap();
        assert!((got.effect - (10.0f64 * 40.0 / (20.0 * 5.0)).ln()).abs() < 1e-15);
        assert!((got.stderr - (0.1f64 + 0.05 + 0.2 + 0.025).sqrt()).abs() < 1e-15);
        let z = d.studies[1].measurements[0].unwrap();
        assert!((z.effect - (0.5f64 * 40.5 / (20.5 * 5.5)).ln()).abs() < 1e-15);
        assert!(parse_dataset_str("study_id,outcome,a,b,c,d\nx,1,1.5,2,3,4\n", DataFormat::Counts).is_err());
        assert!(parse_dataset_str("study_id,outcome,a,b,c,d\nx,1,0,2,0,4\n", DataFormat::Counts).is_err());
    }

    #[test]
    fn merge_counts_attaches_tables() {
        let mut d = parse_dataset_str("study_id,y1,s1,y2,s2\na,0.1,0.2,0.3,0.4\nb,0.5,0.6,,\n", DataFormat::Wide).unwrap();
        let c = parse_dataset_str("study_id,outcome,a,b,c,d\nb,1,3,4,5,6\n", DataFormat::Counts).unwrap();
        merge_counts(&mut d, &c).unwrap();
        assert_eq!(d.studies[1].counts_for(0), Some(&TwoByTwo::new(3.0, 4.0, 5.0, 6.0)));
        assert!(d.studies[0].counts_for(0).is_none());
        let bad = parse_dataset_str("study_id,outcome,a,b,c,d\nb,2,3,4,5,6\n", DataFormat::Counts).unwrap();
        assert!(merge_counts(&mut d, &bad).is_err());
    }

    #[test]
    fn funnel_symmetric_construction() {
        let studies = vec![
            StudyRecord::new("a", vec![m(1.0, 0.5)]),
            StudyRecord::new("b", vec![m(-1.0, 0.5)]),
            StudyRecord::new("c", vec![m(2.0, 1.0)]),
            StudyRecord::new("d", vec![m(-2.0, 1.0)]),
        ];
        let d = MetaDataset::new(studies, MetaDataset::default_labels(1));
        let rows = funnel_rows(&d, 0).unwrap();
        assert_eq!(rows.len(), 4);
        let pooled = rows[0].pooled_estimate;
        assert!(pooled.abs() < 1e-15);
        assert!((rows[0].effect - pooled + rows[1].effect - pooled).abs() < 1e-15);
        assert!((rows[2].ci_high_bound - 1.96).abs() < 1e-15);
    }

    #[test]
    fn funnel_pooled_is_random_effects_mean() {
        let ys = [0.2, 0.9, -0.4, 1.3, 0.5];
        let ss = [0.3, 0.5, 0.2, 0.8, 0.4];
        let studies = ys
            .iter()
            .zip(&ss)
            .enumerate()
            .map(|(i, (&y, &s))| StudyRecord::new(format!("s{i}"), vec![m(y, s), None]))
            .chain(std::iter::once(StudyRecord::new("z", vec![None, m(0.0, 1.0)])))
            .collect();
        let d = MetaDataset::new(studies, MetaDataset::default_labels(2));
        // Independent DerSimonian-Laird computation.
        let w: Vec<f64> = ss.iter().map(|s| 1.0 / (s * s)).collect();
        let sw: f64 = w.iter().sum();
        let fe: f64 = w.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
        let q: f64 = w.iter().zip(&ys).map(|(w, y)| w * (y - fe).powi(2)).sum();
        let c = sw - w.iter().map(|w| w * w).sum::<f64>() / sw;
        let tau2 = ((q - 4.0) / c).max(0.0);
        assert!(tau2 > 0.0);
        let wr: Vec<f64> = ss.iter().map(|s| 1.0 / (s * s + tau2)).collect();
        let re = wr.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / wr.iter().sum::<f64>();
        let rows = funnel_rows(&d, 0).unwrap();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!((r.pooled_estimate - re).abs() < 1e-12);
        }
        assert!(funnel_rows(&d, 2).is_err());
    }

    #[test]
    fn funnel_csv_header() {
        let mut buf = Vec::new();
        write_funnel(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "effect,stderr,pooled_estimate,ci_low_bound,ci_high_bound\n");
    }

    fn arb_dataset() -> impl Strategy<Value = MetaDataset> {
        (1usize..4, 1usize..8).prop_flat_map(|(j, n)| {
            let cell = proptest::option::weighted(0.7, (-1e3f64..1e3, 1e-4f64..1e2));
            proptest::collection::vec(proptest::collection::vec(cell, j), n).prop_map(move |rows| {
                let studies = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut cells)| {
                        if cells.iter().all(Option::is_none) {
                            cells[0] = Some((0.0, 1.0));
                        }
                        let ms = cells.into_iter().map(|c| c.map(|(y, s)| OutcomeMeasurement::new(y, s).unwrap())).collect();
                        StudyRecord::new(format!("st{i}"), ms)
                    })
                    .collect();
                MetaDataset::new(studies, MetaDataset::default_labels(j))
            })
        })
    }

    fn arb_counts() -> impl Strategy<Value = MetaDataset> {
        (1usize..3, 1usize..6).prop_flat_map(|(j, n)| {
            let table = (0u32..60, 1u32..60, 1u32..60, 0u32..60)
                .prop_map(|(a, b, c, d)| TwoByTwo::new(a as f64, b as f64, c as f64, d as f64));
            proptest::collection::vec(proptest::collection::vec(proptest::option::weighted(0.8, table), j), n).prop_map(
                move |rows| {
                    let studies = rows
                        .into_iter()
                        .enumerate()
                        .map(|(i, mut cells)| {
                            if cells.iter().all(Option::is_none) {
                                cells[0] = Some(TwoByTwo::new(1.0, 2.0, 3.0, 4.0));
                            }
                            let ms = cells.iter().map(|c| c.map(|t| measurement_from_counts(&t).unwrap())).collect();
                            StudyRecord::new(format!("st{i}"), ms).with_counts(cells)
                        })
                        .collect();
                    MetaDataset::new(studies, MetaDataset::default_labels(j))
                },
            )
        })
    }

    /// Long layout cannot express an outcome nobody reports.
    fn every_outcome_reported(d: &MetaDataset) -> bool {
        (0..d.n_outcomes()).all(|j| d.reporting_count(j) > 0)
    }

    proptest! {
        #[test]
        fn wide_round_trip(d in arb_dataset()) {
            let text = dataset_to_string(&d, DataFormat::Wide).unwrap();
            prop_assert_eq!(parse_dataset_str(&text, DataFormat::Wide).unwrap(), d);
        }

        #[test]
        fn long_round_trip(d in arb_dataset().prop_filter("all outcomes reported", every_outcome_reported)) {
            let text = dataset_to_string(&d, DataFormat::Long).unwrap();
            prop_assert_eq!(parse_dataset_str(&text, DataFormat::Long).unwrap(), d);
        }

        #[test]
        fn counts_round_trip(d in arb_counts().prop_filter("all outcomes reported", every_outcome_reported)) {
            let text = dataset_to_string(&d, DataFormat::Counts).unwrap();
            prop_assert_eq!(parse_dataset_str(&text, DataFormat::Counts).unwrap(), d);
        }
    }
}
