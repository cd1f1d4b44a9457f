//! Multivariate meta-analysis data and the random-effects generative model.
//!
//! A study reports up to `J` outcomes, each as an effect estimate with its
//! within-study standard error. Unreported outcomes are `None`; nothing is
//! encoded with sentinel values.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{MetaError, Result};

/// Smallest number of reporting studies an outcome needs to enter a test.
pub const MIN_STUDIES_PER_OUTCOME: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMeasurement {
    pub effect: f64,
    pub stderr: f64,
}

impl OutcomeMeasurement {
    pub fn new(effect: f64, stderr: f64) -> Result<Self> {
        if !effect.is_finite() {
            return Err(MetaError::InvalidInput(format!("effect {effect} is not finite")));
        }
        if !(stderr.is_finite() && stderr > 0.0) {
            return Err(MetaError::InvalidInput(format!(
                "standard error {stderr} must be positive and finite"
            )));
        }
        Ok(Self { effect, stderr })
    }

    pub fn variance(&self) -> f64 {
        self.stderr * self.stderr
    }
}

/// Counts of a 2×2 table: `a`/`b` are cases/controls in the exposed group,
/// `c`/`d` cases/controls in the unexposed group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwo {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl TwoByTwo {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn has_zero_cell(&self) -> bool {
        self.a == 0.0 || self.b == 0.0 || self.c == 0.0 || self.d == 0.0
    }

    /// Haldane–Anscombe correction: 0.5 added to every cell.
    pub fn corrected(&self) -> Self {
        Self::new(self.a + 0.5, self.b + 0.5, self.c + 0.5, self.d + 0.5)
    }

    pub fn log_odds_ratio(&self) -> f64 {
        (self.a * self.d / (self.b * self.c)).ln()
    }

    /// Woolf variance 1/a + 1/b + 1/c + 1/d.
    pub fn naive_variance(&self) -> f64 {
        1.0 / self.a + 1.0 / self.b + 1.0 / self.c + 1.0 / self.d
    }

    pub(crate) fn check(&self, index: usize) -> Result<()> {
        let cells = [self.a, self.b, self.c, self.d];
        if cells.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MetaError::InvalidTable {
                index,
                reason: "cells must be finite and nonnegative".into(),
            });
        }
        if self.a + self.c <= 0.0 || self.b + self.d <= 0.0 {
            return Err(MetaError::InvalidTable {
                index,
                reason: "empty margin (a+c or b+d is zero)".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub measurements: Vec<Option<OutcomeMeasurement>>,
    /// Per-outcome 2×2 counts for binary outcomes; empty when no outcome has counts.
    #[serde(default)]
    pub counts: Vec<Option<TwoByTwo>>,
}

impl StudyRecord {
    pub fn new(study_id: impl Into<String>, measurements: Vec<Option<OutcomeMeasurement>>) -> Self {
        Self {
            study_id: study_id.into(),
            measurements,
            counts: Vec::new(),
        }
    }

    pub fn with_counts(mut self, counts: Vec<Option<TwoByTwo>>) -> Self {
        self.counts = counts;
        self
    }

    pub fn counts_for(&self, outcome: usize) -> Option<&TwoByTwo> {
        self.counts.get(outcome).and_then(|c| c.as_ref())
    }

    pub fn reports(&self, outcome: usize) -> bool {
        matches!(self.measurements.get(outcome), Some(Some(_)))
    }

    pub fn reported_count(&self) -> usize {
        self.measurements.iter().filter(|m| m.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    pub studies: Vec<StudyRecord>,
    pub outcome_labels: Vec<String>,
}

impl MetaDataset {
    pub fn new(studies: Vec<StudyRecord>, outcome_labels: Vec<String>) -> Self {
        Self {
            studies,
            outcome_labels,
        }
    }

    pub fn default_labels(n_outcomes: usize) -> Vec<String> {
        (1..=n_outcomes).map(|j| format!("outcome{j}")).collect()
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcome_labels.len()
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    /// Indices (in dataset order) of the studies reporting `outcome`.
    pub fn reporting_index(&self, outcome: usize) -> Vec<usize> {
        self.studies
            .iter()
            .enumerate()
            .filter(|(_, s)| s.reports(outcome))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn reporting_count(&self, outcome: usize) -> usize {
        self.studies.iter().filter(|s| s.reports(outcome)).count()
    }

    /// Effects and standard errors of the studies reporting `outcome`.
    pub fn outcome_columns(&self, outcome: usize) -> (Vec<f64>, Vec<f64>) {
        self.studies
            .iter()
            .filter_map(|s| s.measurements.get(outcome).copied().flatten())
            .map(|m| (m.effect, m.stderr))
            .unzip()
    }

    pub fn label(&self, outcome: usize) -> &str {
        &self.outcome_labels[outcome]
    }

    /// Restrict the dataset to the given outcomes (in the given order).
    pub fn select_outcomes(&self, outcomes: &[usize]) -> MetaDataset {
        let studies = self
            .studies
            .iter()
            .map(|s| {
                let measurements = outcomes.iter().map(|&j| s.measurements[j]).collect();
                let counts = if s.counts.is_empty() {
                    Vec::new()
                } else {
                    outcomes.iter().map(|&j| s.counts.get(j).copied().flatten()).collect()
                };
                StudyRecord {
                    study_id: s.study_id.clone(),
                    measurements,
                    counts,
                }
            })
            .filter(|s: &StudyRecord| s.reported_count() > 0)
            .collect();
        let labels = outcomes.iter().map(|&j| self.outcome_labels[j].clone()).collect();
        MetaDataset::new(studies, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoOutcomes,
    WrongArity {
        study_id: String,
        expected: usize,
        found: usize,
    },
    NothingReported {
        study_id: String,
    },
    NonFinite {
        study_id: String,
        outcome: String,
    },
    NonPositiveStderr {
        study_id: String,
        outcome: String,
        stderr: f64,
    },
    InvalidCounts {
        study_id: String,
        outcome: String,
        reason: String,
    },
    TooFewStudies {
        outcome: String,
        reporting: usize,
    },
    DuplicateId {
        study_id: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoOutcomes => write!(f, "dataset declares no outcomes"),
            Violation::WrongArity {
                study_id,
                expected,
                found,
            } => write!(f, "study {study_id}: {found} measurement slots, expected {expected}"),
            Violation::NothingReported { study_id } => {
                write!(f, "study {study_id}: no outcome reported")
            }
            Violation::NonFinite { study_id, outcome } => {
                write!(f, "study {study_id}, outcome {outcome}: non-finite value")
            }
            Violation::NonPositiveStderr {
                study_id,
                outcome,
                stderr,
            } => write!(f, "study {study_id}, outcome {outcome}: stderr {stderr} is not positive"),
            Violation::InvalidCounts {
                study_id,
                outcome,
                reason,
            } => write!(f, "study {study_id}, outcome {outcome}: invalid counts ({reason})"),
            Violation::TooFewStudies { outcome, reporting } => write!(
                f,
                "outcome {outcome}: m_j below minimum ({reporting} < {MIN_STUDIES_PER_OUTCOME})"
            ),
            Violation::DuplicateId { study_id } => write!(f, "duplicate study id {study_id}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(MetaError::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Report every problem that would make `data` unusable. Never fails.
pub fn validate_dataset(data: &MetaDataset) -> ValidationReport {
    let mut violations = Vec::new();
    let n_out = data.n_outcomes();
    if n_out == 0 {
        violations.push(Violation::NoOutcomes);
    }
    let mut seen = HashSet::new();
    for study in &data.studies {
        if !seen.insert(study.study_id.as_str()) {
            violations.push(Violation::DuplicateId {
                study_id: study.study_id.clone(),
            });
        }
        if study.measurements.len() != n_out {
            violations.push(Violation::WrongArity {
                study_id: study.study_id.clone(),
                expected: n_out,
                found: study.measurements.len(),
            });
            continue;
        }
        if study.reported_count() == 0 {
            violations.push(Violation::NothingReported {
                study_id: study.study_id.clone(),
            });
        }
        for (j, m) in study.measurements.iter().enumerate() {
            let Some(m) = m else { continue };
            let outcome = data.outcome_labels[j].clone();
            if !m.effect.is_finite() || m.stderr.is_nan() || m.stderr.is_infinite() {
                violations.push(Violation::NonFinite {
                    study_id: study.study_id.clone(),
                    outcome,
                });
            } else if m.stderr <= 0.0 {
                violations.push(Violation::NonPositiveStderr {
                    study_id: study.study_id.clone(),
                    outcome,
                    stderr: m.stderr,
                });
            }
        }
        for (j, table) in study.counts.iter().enumerate() {
            if let Some(t) = table {
                if let Err(e) = t.check(j) {
                    violations.push(Violation::InvalidCounts {
                        study_id: study.study_id.clone(),
                        outcome: data.outcome_labels.get(j).cloned().unwrap_or_default(),
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    for j in 0..n_out {
        let reporting = data
            .studies
            .iter()
            .filter(|s| s.measurements.len() == n_out && s.reports(j))
            .count();
        if reporting < MIN_STUDIES_PER_OUTCOME {
            violations.push(Violation::TooFewStudies {
                outcome: data.outcome_labels[j].clone(),
                reporting,
            });
        }
    }
    ValidationReport { violations }
}

/// Distribution of the within-study standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StderrDist {
    /// `s = |X|` with `X ~ Normal(mean, sd)`, so that `s² = X²`.
    SquaredNormal { mean: f64, sd: f64 },
    /// Every study has the same standard error.
    Fixed(f64),
    /// `s ~ Uniform(low, high)`.
    Uniform { low: f64, high: f64 },
}

impl Default for StderrDist {
    fn default() -> Self {
        StderrDist::SquaredNormal { mean: 0.3, sd: 0.5 }
    }
}

impl StderrDist {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            StderrDist::SquaredNormal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            StderrDist::Fixed(s) => s.is_finite() && s > 0.0,
            StderrDist::Uniform { low, high } => low > 0.0 && high > low && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(MetaError::InvalidParams(format!("invalid stderr distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StderrDist::SquaredNormal { mean, sd } => {
                let normal = Normal::new(mean, sd).expect("checked sd");
                loop {
                    let s = normal.sample(rng).abs();
                    if s > 0.0 {
                        return s;
                    }
                }
            }
            StderrDist::Fixed(s) => s,
            StderrDist::Uniform { low, high } => {
                Uniform::new(low, high).expect("checked bounds").sample(rng)
            }
        }
    }
}

/// Generative truth of the multivariate random-effects model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub tau2: Vec<f64>,
    pub rho_b: DMatrix<f64>,
    pub rho_w: DMatrix<f64>,
    pub s_dist: StderrDist,
}

impl ModelParams {
    pub fn new(
        beta: Vec<f64>,
        tau2: Vec<f64>,
        rho_b: DMatrix<f64>,
        rho_w: DMatrix<f64>,
        s_dist: StderrDist,
    ) -> Result<Self> {
        let j = beta.len();
        if j == 0 {
            return Err(MetaError::InvalidParams("at least one outcome is required".into()));
        }
        if tau2.len() != j {
            return Err(MetaError::InvalidParams("tau2 length differs from beta".into()));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(MetaError::InvalidParams("beta must be finite".into()));
        }
        if tau2.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(MetaError::InvalidParams("tau2 must be finite and nonnegative".into()));
        }
        check_correlation(&rho_b, j, "rho_B")?;
        check_correlation(&rho_w, j, "rho_W")?;
        s_dist.check()?;
        Ok(Self {
            beta,
            tau2,
            rho_b,
            rho_w,
            s_dist,
        })
    }

    /// All pairs of outcomes share the same within- and between-study correlation.
    pub fn exchangeable(beta: Vec<f64>, tau2: Vec<f64>, rho_w: f64, rho_b: f64) -> Result<Self> {
        let j = beta.len();
        Self::new(
            beta,
            tau2,
            exchangeable_correlation(j, rho_b),
            exchangeable_correlation(j, rho_w),
            StderrDist::default(),
        )
    }

    pub fn with_s_dist(mut self, s_dist: StderrDist) -> Result<Self> {
        s_dist.check()?;
        self.s_dist = s_dist;
        Ok(self)
    }

    pub fn n_outcomes(&self) -> usize {
        self.beta.len()
    }

    /// Between-study covariance Ω.
    pub fn between_covariance(&self) -> DMatrix<f64> {
        let tau: Vec<f64> = self.tau2.iter().map(|t| t.sqrt()).collect();
        DMatrix::from_fn(self.n_outcomes(), self.n_outcomes(), |r, c| {
            tau[r] * tau[c] * self.rho_b[(r, c)]
        })
    }
}

pub fn exchangeable_correlation(j: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(j, j, |r, c| if r == c { 1.0 } else { rho })
}

fn check_correlation(m: &DMatrix<f64>, j: usize, name: &str) -> Result<()> {
    if m.nrows() != j || m.ncols() != j {
        return Err(MetaError::InvalidParams(format!("{name} must be {j}x{j}")));
    }
    for r in 0..j {
        if m[(r, r)] != 1.0 {
            return Err(MetaError::InvalidParams(format!("{name} must have unit diagonal")));
        }
        for c in 0..j {
            if m[(r, c)] != m[(c, r)] || !m[(r, c)].is_finite() {
                return Err(MetaError::InvalidParams(format!("{name} must be symmetric")));
            }
        }
    }
    let min_eig = min_eigenvalue(m);
    if min_eig < -1e-10 {
        return Err(MetaError::InvalidParams(format!(
            "{name} is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// V_i = Δ_i + Ω for a study with within-study standard errors `s_row`.
pub fn marginal_covariance(params: &ModelParams, s_row: &[f64]) -> Result<DMatrix<f64>> {
    let j = params.n_outcomes();
    if s_row.len() != j {
        return Err(MetaError::InvalidInput(format!(
            "standard-error row has length {}, expected {j}",
            s_row.len()
        )));
    }
    if s_row.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(MetaError::InvalidInput("standard errors must be positive".into()));
    }
    let tau: Vec<f64> = params.tau2.iter().map(|t| t.sqrt()).collect();
    let v = DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            s_row[r] * s_row[r] + params.tau2[r]
        } else {
            s_row[r] * s_row[c] * params.rho_w[(r, c)] + tau[r] * tau[c] * params.rho_b[(r, c)]
        }
    });
    let scale = v.diagonal().iter().fold(0.0f64, |a, b| a.max(*b));
    let min_eig = min_eigenvalue(&v);
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(MetaError::NotPositiveSemidefinite(min_eig));
    }
    Ok(v)
}

/// A factor `L` with `L Lᵀ = V`; falls back to an eigen square root when V is singular.
pub(crate) fn covariance_factor(v: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = v.clone().cholesky() {
        return chol.l();
    }
    let eig = v.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

pub(crate) fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], factor: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let x = factor * z;
    mean.iter().zip(x.iter()).map(|(m, e)| m + e).collect()
}

/// Draw one complete study from the marginal model. Returns effects and standard errors.
pub(crate) fn draw_study<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let s: Vec<f64> = (0..params.n_outcomes()).map(|_| params.s_dist.sample(rng)).collect();
    let v = marginal_covariance(params, &s)?;
    let y = sample_mvn(&params.beta, &covariance_factor(&v), rng);
    Ok((y, s))
}

pub(crate) fn generate_with_rng<R: Rng + ?Sized>(
    params: &ModelParams,
    m: usize,
    id_offset: usize,
    rng: &mut R,
) -> Result<Vec<StudyRecord>> {
    (0..m)
        .map(|i| {
            let (y, s) = draw_study(params, rng)?;
            let measurements = y
                .into_iter()
                .zip(s)
                .map(|(effect, stderr)| Some(OutcomeMeasurement { effect, stderr }))
                .collect();
            Ok(StudyRecord::new(format!("s{}", id_offset + i + 1), measurements))
        })
        .collect()
}

/// Simulate `m` complete studies. Identical `(params, m, seed)` give bit-identical output.
pub fn generate_dataset(params: &ModelParams, m: usize, seed: u64) -> Result<MetaDataset> {
    if m == 0 {
        return Err(MetaError::InvalidInput("m must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let studies = generate_with_rng(params, m, 0, &mut rng)?;
    Ok(MetaDataset::new(studies, MetaDataset::default_labels(params.n_outcomes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bivariate(tau2: f64, rho_w: f64, rho_b: f64) -> ModelParams {
        ModelParams::exchangeable(vec![0.0, 0.0], vec![tau2, tau2], rho_w, rho_b).unwrap()
    }

    #[test]
    fn independence_case_is_identity() {
        let p = bivariate(0.0, 0.0, 0.0);
        let v = marginal_covariance(&p, &[1.0, 1.0]).unwrap();
        assert_eq!(v, DMatrix::identity(2, 2));
    }

    #[test]
    fn off_diagonal_hand_value() {
        let p = bivariate(0.5, 0.5, 0.5);
        let v = marginal_covariance(&p, &[1.0, 2.0]).unwrap();
        // 1*2*0.5 + sqrt(0.5)*sqrt(0.5)*0.5
        assert!((v[(0, 1)] - 1.25).abs() < 1e-12);
        assert_eq!(v[(0, 1)], v[(1, 0)]);
        assert_eq!(v[(0, 0)], 1.5);
        assert_eq!(v[(1, 1)], 4.5);
    }

    #[test]
    fn rejects_non_psd_correlation() {
        let rho = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let err = ModelParams::new(
            vec![0.0; 3],
            vec![1.0; 3],
            rho,
            DMatrix::identity(3, 3),
            StderrDist::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let p = bivariate(0.9, 0.5, -0.5);
        let a = generate_dataset(&p, 20, 7).unwrap();
        let b = generate_dataset(&p, 20, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&p, 20, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn singular_covariance_still_samples() {
        // tau2 = 0 and perfectly correlated within-study errors: V is rank one.
        let p = ModelParams::exchangeable(vec![0.0, 0.0], vec![0.0, 0.0], 1.0, 0.0)
            .unwrap()
            .with_s_dist(StderrDist::Fixed(1.0))
            .unwrap();
        let d = generate_dataset(&p, 50, 1).unwrap();
        for s in &d.studies {
            let y0 = s.measurements[0].unwrap().effect;
            let y1 = s.measurements[1].unwrap().effect;
            assert!((y0 - y1).abs() < 1e-9);
        }
    }

    fn complete(m: usize) -> MetaDataset {
        let studies = (0..m)
            .map(|i| {
                StudyRecord::new(
                    format!("s{i}"),
                    vec![
                        Some(OutcomeMeasurement::new(0.1 * i as f64, 0.5).unwrap()),
                        Some(OutcomeMeasurement::new(-0.1 * i as f64, 0.4).unwrap()),
                    ],
                )
            })
            .collect();
        MetaDataset::new(studies, MetaDataset::default_labels(2))
    }

    #[test]
    fn validation_reports() {
        assert!(validate_dataset(&complete(10)).is_empty());

        let mut d = complete(10);
        d.studies[3].measurements[1] = Some(OutcomeMeasurement {
            effect: 0.2,
            stderr: 0.0,
        });
        let r = validate_dataset(&d);
        assert_eq!(r.violations.len(), 1);
        let msg = r.violations[0].to_string();
        assert!(msg.contains("s3") && msg.contains("outcome2"), "{msg}");

        let mut d = complete(10);
        for s in d.studies.iter_mut().skip(2) {
            s.measurements[1] = None;
        }
        let r = validate_dataset(&d);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].to_string().contains("m_j below minimum"));

        let mut d = complete(5);
        d.studies[4].study_id = "s0".into();
        assert!(matches!(
            validate_dataset(&d).violations[0],
            Violation::DuplicateId { .. }
        ));
    }
}
