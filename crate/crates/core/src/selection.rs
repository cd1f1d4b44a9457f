//! Publication and outcome-reporting selection scenarios.
//!
//! Scenarios C1–C3 publish or suppress a whole study depending on the
//! p-values of its outcomes. Scenario P decides each outcome separately from
//! a logistic model in its standardized deviate, so studies may report only
//! part of their outcomes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::model::{generate_with_rng, MetaDataset, ModelParams, StudyRecord};
use crate::special::normal_two_sided;

/// Default p-value bin edges: `<0.01`, `<0.05`, `<0.10`, `≥0.10`.
pub const DEFAULT_CUTPOINTS: [f64; 3] = [0.01, 0.05, 0.10];
pub const C2_DEFAULT: [f64; 4] = [0.9, 0.7, 0.5, 0.2];
pub const C3_DEFAULT: [f64; 4] = [0.8, 0.6, 0.4, 0.3];

/// Publication probability as a step function of p-value bins.
///
/// `probs[r][c]` is the probability for a study whose worst outcome falls in
/// bin `r` and second-worst in bin `c` (for two outcomes, simply the two bins).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublicationGrid {
    pub cutpoints: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

impl PublicationGrid {
    pub fn new(cutpoints: Vec<f64>, probs: Vec<Vec<f64>>) -> Result<Self> {
        let k = cutpoints.len() + 1;
        if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetaError::InvalidParams("grid cutpoints must increase".into()));
        }
        if probs.len() != k || probs.iter().any(|r| r.len() != k) {
            return Err(MetaError::InvalidParams(format!("grid must be {k}x{k}")));
        }
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(MetaError::InvalidParams("grid probabilities must lie in [0, 1]".into()));
        }
        for r in 0..k {
            for c in 0..k {
                if probs[r][c] != probs[c][r] {
                    return Err(MetaError::InvalidParams("grid must be symmetric".into()));
                }
            }
        }
        Ok(Self { cutpoints, probs })
    }

    /// Grid whose probability depends only on the worse of the two bins.
    pub fn from_worst_bin(cutpoints: Vec<f64>, per_bin: &[f64]) -> Result<Self> {
        let k = per_bin.len();
        let probs = (0..k)
            .map(|r| (0..k).map(|c| per_bin[r.max(c)]).collect())
            .collect();
        Self::new(cutpoints, probs)
    }

    pub fn bin(&self, p: f64) -> usize {
        self.cutpoints.iter().take_while(|&&c| p >= c).count()
    }

    pub fn probability(&self, p_values: &[f64]) -> f64 {
        let mut bins: Vec<usize> = p_values.iter().map(|&p| self.bin(p)).collect();
        bins.sort_unstable_by(|a, b| b.cmp(a));
        match bins.as_slice() {
            [] => 1.0,
            [only] => self.probs[*only][*only],
            [worst, second, ..] => self.probs[*worst][*second],
        }
    }
}

/// Logistic reporting model
/// `logit π = (b0 + b1·SND + b2·SND²)·I(SND < t) + plateau·I(SND ≥ t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogitSelection {
    pub intercept: f64,
    pub linear: f64,
    pub quadratic: f64,
    pub threshold: f64,
    pub plateau: f64,
}

impl Default for LogitSelection {
    fn default() -> Self {
        Self {
            intercept: -2.5,
            linear: 0.1,
            quadratic: 1.5,
            threshold: 2.0,
            plateau: 4.0,
        }
    }
}

impl LogitSelection {
    pub fn logit(&self, snd: f64) -> f64 {
        if snd < self.threshold {
            self.intercept + self.linear * snd + self.quadratic * snd * snd
        } else {
            self.plateau
        }
    }

    pub fn probability(&self, snd: f64) -> f64 {
        1.0 / (1.0 + (-self.logit(snd)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScenarioKind {
    None,
    C1,
    C2,
    C3,
    P,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub grid: Option<PublicationGrid>,
    pub logit: Option<LogitSelection>,
}

impl ScenarioSpec {
    pub fn none() -> Self {
        Self {
            kind: ScenarioKind::None,
            grid: None,
            logit: None,
        }
    }

    /// Published iff every outcome has p < 0.05.
    pub fn c1() -> Self {
        let grid = PublicationGrid::from_worst_bin(DEFAULT_CUTPOINTS.to_vec(), &[1.0, 1.0, 0.0, 0.0]).expect("valid grid");
        Self {
            kind: ScenarioKind::C1,
            grid: Some(grid),
            logit: None,
        }
    }

    pub fn c2() -> Self {
        Self::graded(ScenarioKind::C2, &C2_DEFAULT)
    }

    pub fn c3() -> Self {
        Self::graded(ScenarioKind::C3, &C3_DEFAULT)
    }

    fn graded(kind: ScenarioKind, per_bin: &[f64]) -> Self {
        let grid = PublicationGrid::from_worst_bin(DEFAULT_CUTPOINTS.to_vec(), per_bin).expect("valid grid");
        Self {
            kind,
            grid: Some(grid),
            logit: None,
        }
    }

    pub fn p() -> Self {
        Self::partial(LogitSelection::default())
    }

    pub fn partial(logit: LogitSelection) -> Self {
        Self {
            kind: ScenarioKind::P,
            grid: None,
            logit: Some(logit),
        }
    }

    pub fn custom(grid: PublicationGrid) -> Self {
        Self {
            kind: ScenarioKind::Custom,
            grid: Some(grid),
            logit: None,
        }
    }

    /// Parse `none`, `C1`, `C2`, `C3` or `P` (case-insensitive).
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Self::none()),
            "c1" => Ok(Self::c1()),
            "c2" => Ok(Self::c2()),
            "c3" => Ok(Self::c3()),
            "p" => Ok(Self::p()),
            other => Err(MetaError::Config(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ScenarioKind::None => "none",
            ScenarioKind::C1 => "C1",
            ScenarioKind::C2 => "C2",
            ScenarioKind::C3 => "C3",
            ScenarioKind::P => "P",
            ScenarioKind::Custom => "custom",
        }
    }
}

/// What the selection step sees of one outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeSignal {
    pub snd: f64,
    pub p_value: f64,
}

impl OutcomeSignal {
    /// Two-sided Wald p-value from `(y, s)`; SND on the `s² + τ²` scale.
    pub fn from_measurement(effect: f64, stderr: f64, tau2: f64) -> Self {
        Self {
            snd: effect / (stderr * stderr + tau2).sqrt(),
            p_value: normal_two_sided(effect / stderr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectionProbability {
    /// Publish (all reported outcomes) or suppress the whole study.
    Study(f64),
    /// Report each outcome independently.
    PerOutcome(Vec<f64>),
}

pub fn selection_probability(spec: &ScenarioSpec, study: &[OutcomeSignal]) -> SelectionProbability {
    match spec.kind {
        ScenarioKind::None => SelectionProbability::Study(1.0),
        ScenarioKind::P => {
            let logit = spec.logit.unwrap_or_default();
            SelectionProbability::PerOutcome(study.iter().map(|o| logit.probability(o.snd)).collect())
        }
        ScenarioKind::C1 | ScenarioKind::C2 | ScenarioKind::C3 | ScenarioKind::Custom => {
            let grid = spec.grid.as_ref().expect("grid scenarios carry a grid");
            let p: Vec<f64> = study.iter().map(|o| o.p_value).collect();
            SelectionProbability::Study(grid.probability(&p))
        }
    }
}

/// Whether `study` survives selection, possibly with outcomes removed.
fn select_study<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    study: &StudyRecord,
    tau2: &[f64],
    rng: &mut R,
) -> Option<StudyRecord> {
    if spec.kind == ScenarioKind::None {
        return Some(study.clone());
    }
    let reported: Vec<usize> = (0..study.measurements.len()).filter(|&j| study.reports(j)).collect();
    let signals: Vec<OutcomeSignal> = reported
        .iter()
        .map(|&j| {
            let m = study.measurements[j].expect("reported");
            OutcomeSignal::from_measurement(m.effect, m.stderr, tau2.get(j).copied().unwrap_or(0.0))
        })
        .collect();
    match selection_probability(spec, &signals) {
        SelectionProbability::Study(p) => (rng.random::<f64>() < p).then(|| study.clone()),
        SelectionProbability::PerOutcome(probs) => {
            let mut out = study.clone();
            for (&j, p) in reported.iter().zip(probs) {
                if rng.random::<f64>() >= p {
                    out.measurements[j] = None;
                    if let Some(c) = out.counts.get_mut(j) {
                        *c = None;
                    }
                }
            }
            (out.reported_count() > 0).then_some(out)
        }
    }
}

pub(crate) fn apply_selection_with<R: Rng + ?Sized>(
    studies: &[StudyRecord],
    spec: &ScenarioSpec,
    tau2: &[f64],
    rng: &mut R,
) -> Vec<StudyRecord> {
    studies
        .iter()
        .filter_map(|s| select_study(spec, s, tau2, rng))
        .collect()
}

/// Apply a selection scenario. `tau2` is the between-study variance used for
/// the SND of the logistic scenario.
pub fn apply_selection(data: &MetaDataset, spec: &ScenarioSpec, tau2: &[f64], seed: u64) -> MetaDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MetaDataset::new(
        apply_selection_with(&data.studies, spec, tau2, &mut rng),
        data.outcome_labels.clone(),
    )
}

pub const MAX_SELECTION_BATCHES: usize = 200;

/// Generate batches of `3n` studies, select, and sample `n` survivors.
/// Further batches are drawn while fewer than `n` studies have survived.
pub(crate) fn select_n_with<R, G>(
    n: usize,
    spec: &ScenarioSpec,
    tau2: &[f64],
    rng: &mut R,
    mut generate: G,
) -> Result<Vec<StudyRecord>>
where
    R: Rng + ?Sized,
    G: FnMut(usize, usize, &mut R) -> Result<Vec<StudyRecord>>,
{
    if spec.kind == ScenarioKind::None {
        return generate(n, 0, rng);
    }
    let batch = 3 * n;
    let mut survivors = Vec::new();
    let mut generated = 0;
    for _ in 0..MAX_SELECTION_BATCHES {
        let studies = generate(batch, generated, rng)?;
        generated += batch;
        survivors.extend(apply_selection_with(&studies, spec, tau2, rng));
        if survivors.len() >= n {
            let mut keep = sample(rng, survivors.len(), n).into_vec();
            keep.sort_unstable();
            return Ok(keep.into_iter().map(|i| survivors[i].clone()).collect());
        }
    }
    Err(MetaError::SelectionRetryCap {
        survivors: survivors.len(),
        needed: n,
        batches: MAX_SELECTION_BATCHES,
    })
}

pub fn simulate_selected_dataset(params: &ModelParams, n: usize, spec: &ScenarioSpec, seed: u64) -> Result<MetaDataset> {
    if n < 3 {
        return Err(MetaError::InvalidInput("n must be at least 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let studies = select_n_with(n, spec, &params.tau2, &mut rng, |m, offset, rng| {
        generate_with_rng(params, m, offset, rng)
    })?;
    Ok(MetaDataset::new(studies, MetaDataset::default_labels(params.n_outcomes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, OutcomeMeasurement};

    fn sig(p: f64) -> OutcomeSignal {
        OutcomeSignal { snd: 0.0, p_value: p }
    }

    #[test]
    fn c1_rule() {
        let c1 = ScenarioSpec::c1();
        assert_eq!(selection_probability(&c1, &[sig(0.01), sig(0.04)]), SelectionProbability::Study(1.0));
        assert_eq!(selection_probability(&c1, &[sig(0.01), sig(0.06)]), SelectionProbability::Study(0.0));
        assert_eq!(selection_probability(&c1, &[sig(0.5), sig(0.001)]), SelectionProbability::Study(0.0));
    }

    #[test]
    fn logit_values() {
        let l = LogitSelection::default();
        assert!((l.probability(0.0) - 0.0758581800212435).abs() < 1e-12);
        assert!((l.logit(1.0) + 0.9).abs() < 1e-15);
        assert!((l.probability(1.0) - 0.289050497374996).abs() < 1e-12);
        for s in [2.0, 2.5, 10.0] {
            assert!((l.probability(s) - 0.982013790037908).abs() < 1e-12);
        }
        let p = ScenarioSpec::p();
        let s = [
            OutcomeSignal { snd: 0.0, p_value: 0.9 },
            OutcomeSignal { snd: 3.0, p_value: 0.9 },
        ];
        match selection_probability(&p, &s) {
            SelectionProbability::PerOutcome(v) => {
                assert!((v[0] - 0.0758581800212435).abs() < 1e-12);
                assert!((v[1] - 0.982013790037908).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grids_are_monotone() {
        for spec in [ScenarioSpec::c2(), ScenarioSpec::c3()] {
            let g = spec.grid.unwrap();
            for r in 0..4 {
                for c in 0..3 {
                    assert!(g.probs[r][c] >= g.probs[r][c + 1]);
                    assert!(g.probs[c][r] >= g.probs[c + 1][r]);
                }
            }
        }
        assert_eq!(PublicationGrid::from_worst_bin(DEFAULT_CUTPOINTS.to_vec(), &C2_DEFAULT).unwrap().bin(0.05), 2);
    }

    #[test]
    fn none_is_identity() {
        let p = ModelParams::exchangeable(vec![0.0, 0.0], vec![0.5, 0.5], 0.0, 0.0).unwrap();
        let d = generate_dataset(&p, 30, 1).unwrap();
        assert_eq!(apply_selection(&d, &ScenarioSpec::none(), &p.tau2, 3), d);
        let sim = simulate_selected_dataset(&p, 12, &ScenarioSpec::none(), 4).unwrap();
        assert_eq!(sim.n_studies(), 12);
        assert!(sim.studies.iter().all(|s| s.reported_count() == 2));
    }

    #[test]
    fn c1_keeps_significant_studies() {
        let m = |y| Some(OutcomeMeasurement::new(y, 0.1).unwrap());
        let d = MetaDataset::new(
            (0..20)
                .map(|i| StudyRecord::new(format!("s{i}"), vec![m(0.5 + i as f64 * 0.01), m(-0.4)]))
                .collect(),
            MetaDataset::default_labels(2),
        );
        assert_eq!(apply_selection(&d, &ScenarioSpec::c1(), &[0.0, 0.0], 9), d);

        let p = ModelParams::exchangeable(vec![0.0, 0.0], vec![0.3, 0.3], 0.0, 0.0).unwrap();
        let big = generate_dataset(&p, 2000, 5).unwrap();
        let sel = apply_selection(&big, &ScenarioSpec::c1(), &p.tau2, 6);
        assert!(sel.n_studies() > 0 && sel.n_studies() < 2000);
        for s in &sel.studies {
            for m in s.measurements.iter().flatten() {
                assert!(normal_two_sided(m.effect / m.stderr) < 0.05);
            }
        }
    }

    #[test]
    fn partial_reporting_frequency_at_zero_snd() {
        let n = 100_000;
        let m = Some(OutcomeMeasurement::new(0.0, 1.0).unwrap());
        let d = MetaDataset::new(
            (0..n).map(|i| StudyRecord::new(format!("s{i}"), vec![m, m])).collect(),
            MetaDataset::default_labels(2),
        );
        let sel = apply_selection(&d, &ScenarioSpec::p(), &[0.0, 0.0], 17);
        let kept: usize = sel.studies.iter().map(|s| s.reported_count()).sum();
        let rate = kept as f64 / (2 * n) as f64;
        let p0 = LogitSelection::default().probability(0.0);
        let se = (p0 * (1.0 - p0) / (2 * n) as f64).sqrt();
        assert!((rate - p0).abs() < 3.0 * se, "rate {rate} vs {p0}");
    }

    #[test]
    fn selected_output_has_exactly_n_studies() {
        let p = ModelParams::exchangeable(vec![0.3, 0.3], vec![0.5, 0.5], 0.5, 0.5).unwrap();
        for seed in 0..1000 {
            let d = simulate_selected_dataset(&p, 10, &ScenarioSpec::c2(), seed).unwrap();
            assert_eq!(d.n_studies(), 10);
        }
        let a = simulate_selected_dataset(&p, 25, &ScenarioSpec::p(), 99).unwrap();
        let b = simulate_selected_dataset(&p, 25, &ScenarioSpec::p(), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_selection_hits_cap() {
        let never = PublicationGrid::from_worst_bin(DEFAULT_CUTPOINTS.to_vec(), &[0.0; 4]).unwrap();
        let p = ModelParams::exchangeable(vec![0.0], vec![0.1], 0.0, 0.0).unwrap();
        assert!(matches!(
            simulate_selected_dataset(&p, 5, &ScenarioSpec::custom(never), 1),
            Err(MetaError::SelectionRetryCap { .. })
        ));
    }
}
