//! Test reports: run the requested tests on one dataset and render the
//! results as JSON or as a plain-text table (tests by rows, outcomes by
//! columns).

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::experiment::{begg_outcome, egger_outcome, BeggVariance};
use crate::model::{validate_dataset, MetaDataset};
use crate::msset::{run_msset, MssetOptions, MssetResult};
use crate::univariate::{bonferroni_combine, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TestChoice {
    Msset,
    Egger,
    Begg,
    All,
}

impl TestChoice {
    fn msset(self) -> bool {
        matches!(self, TestChoice::Msset | TestChoice::All)
    }
    fn egger(self) -> bool {
        matches!(self, TestChoice::Egger | TestChoice::All)
    }
    fn begg(self) -> bool {
        matches!(self, TestChoice::Begg | TestChoice::All)
    }
}

impl FromStr for TestChoice {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msset" => Ok(TestChoice::Msset),
            "egger" => Ok(TestChoice::Egger),
            "begg" => Ok(TestChoice::Begg),
            "all" => Ok(TestChoice::All),
            other => Err(MetaError::InvalidInput(format!("unknown test '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub tests: TestChoice,
    pub alpha: f64,
    /// Also governs smoothing of Egger's test on binary outcomes.
    pub msset: MssetOptions,
    pub begg_variance: BeggVariance,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            tests: TestChoice::All,
            alpha: 0.10,
            msset: MssetOptions::default(),
            begg_variance: BeggVariance::FixedEffect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeTest {
    pub outcome: String,
    pub m: usize,
    pub statistic: f64,
    pub df: Option<f64>,
    pub estimate: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnivariateReport {
    pub method: String,
    pub per_outcome: Vec<OutcomeTest>,
    pub bonferroni_p_value: f64,
    pub bonferroni_reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MssetSummary {
    #[serde(flatten)]
    pub result: MssetResult,
    pub reject: bool,
}

/// Every key is always present; tests that were not requested are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub outcome_labels: Vec<String>,
    pub n_studies: usize,
    pub m_per_outcome: Vec<usize>,
    pub alpha: f64,
    pub msset: Option<MssetSummary>,
    pub egger: Option<UnivariateReport>,
    pub begg: Option<UnivariateReport>,
}

fn univariate(
    data: &MetaDataset,
    alpha: f64,
    module: &'static str,
    run: impl Fn(usize) -> Result<TestResult>,
) -> Result<UnivariateReport> {
    let results: Vec<TestResult> = (0..data.n_outcomes())
        .map(|j| run(j).map_err(|e| e.in_outcome(module, data.label(j))))
        .collect::<Result<_>>()?;
    let combined = bonferroni_combine(&results)?;
    Ok(UnivariateReport {
        method: module.to_owned(),
        per_outcome: results
            .iter()
            .enumerate()
            .map(|(j, r)| OutcomeTest {
                outcome: data.label(j).to_owned(),
                m: r.n,
                statistic: r.statistic,
                df: r.df,
                estimate: r.estimate,
                p_value: r.p_value,
                reject: r.rejects(alpha),
            })
            .collect(),
        bonferroni_p_value: combined.p_value,
        bonferroni_reject: combined.rejects(alpha),
    })
}

/// Validate `data` and run the requested tests. Any failure aborts the whole
/// report so callers never emit partial results.
pub fn build_report(data: &MetaDataset, options: &ReportOptions) -> Result<TestReport> {
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(MetaError::InvalidInput(format!("alpha {} must lie in (0, 1)", options.alpha)));
    }
    validate_dataset(data).into_result()?;
    let alpha = options.alpha;
    let msset = if options.tests.msset() {
        let result = run_msset(data, &options.msset).map_err(|e| match e {
            MetaError::InOutcome { .. } | MetaError::Validation(_) => e,
            other => other.in_outcome("msset", "all outcomes"),
        })?;
        Some(MssetSummary {
            reject: result.p_value <= alpha,
            result,
        })
    } else {
        None
    };
    let smooth = |j: usize| options.msset.smooth_binary && options.msset.binary_outcomes.contains(&j);
    let egger = if options.tests.egger() {
        Some(univariate(data, alpha, "egger", |j| egger_outcome(data, j, smooth(j)))?)
    } else {
        None
    };
    let begg = if options.tests.begg() {
        Some(univariate(data, alpha, "begg", |j| begg_outcome(data, j, options.begg_variance))?)
    } else {
        None
    };
    Ok(TestReport {
        outcome_labels: data.outcome_labels.clone(),
        n_studies: data.n_studies(),
        m_per_outcome: (0..data.n_outcomes()).map(|j| data.reporting_count(j)).collect(),
        alpha,
        msset,
        egger,
        begg,
    })
}

pub fn to_json(report: &TestReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| MetaError::InvalidInput(format!("json: {e}")))
}

fn p_fmt(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Plain-text p-value table followed by the statistics behind each line.
pub fn render_text(report: &TestReport) -> String {
    let labels = &report.outcome_labels;
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(0).max(10) + 2;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "p-values (studies: {}, outcomes: {}, alpha = {})",
        report.n_studies,
        labels.len(),
        report.alpha
    );
    let _ = write!(out, "{:<20}", "Test");
    for l in labels {
        let _ = write!(out, "{l:>width$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<20}", "m_j");
    for m in &report.m_per_outcome {
        let _ = write!(out, "{m:>width$}");
    }
    out.push('\n');
    for block in [&report.egger, &report.begg].into_iter().flatten() {
        let name = if block.method == "egger" { "Egger" } else { "Begg" };
        let _ = write!(out, "{name:<20}");
        for t in &block.per_outcome {
            let _ = write!(out, "{:>width$}", p_fmt(t.p_value));
        }
        out.push('\n');
        let _ = writeln!(out, "{:<20}{:>width$}", format!("{name} (Bonferroni)"), p_fmt(block.bonferroni_p_value));
    }
    if let Some(ms) = &report.msset {
        let span = width * labels.len().max(1);
        let _ = writeln!(out, "{:<20}{:^span$}", "MSSET", p_fmt(ms.result.p_value));
    }
    out.push('\n');
    for block in [&report.egger, &report.begg].into_iter().flatten() {
        for t in &block.per_outcome {
            let stat = if block.method == "egger" { "t" } else { "z" };
            let est = if block.method == "egger" { "intercept" } else { "tau" };
            let _ = writeln!(
                out,
                "{} [{}]: {stat} = {:.4}, {est} = {:.4}, p = {}{}",
                block.method,
                t.outcome,
                t.statistic,
                t.estimate.unwrap_or(f64::NAN),
                p_fmt(t.p_value),
                if t.reject { " *" } else { "" }
            );
        }
    }
    if let Some(ms) = &report.msset {
        let r = &ms.result;
        let _ = writeln!(
            out,
            "msset: statistic = {:.4}, df = {}, lambda_bar = {:.4e}, p = {}{}",
            r.statistic,
            r.df,
            r.lambda_bar,
            p_fmt(r.p_value),
            if ms.reject { " *" } else { "" }
        );
        let _ = writeln!(out, "  score U = {:?}", r.score);
        let _ = writeln!(out, "  I0^aa diagonal = {:?}", r.info.aa_inverse);
        let _ = writeln!(out, "  Sigma_aa = {:?}", r.sigma_aa);
    }
    out
}
