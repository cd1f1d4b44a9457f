//! Monte Carlo rejection-rate experiments (Type I error and power).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::heterogeneity::outcome_columns;
use crate::model::{
    covariance_factor, generate_with_rng, sample_mvn, MetaDataset, ModelParams, OutcomeMeasurement, StderrDist,
    StudyRecord, TwoByTwo,
};
use crate::msset::{run_msset, EvaluationPoint, MssetOptions};
use crate::seeds::derive_seed;
use crate::selection::{select_n_with, PublicationGrid, ScenarioSpec, DEFAULT_CUTPOINTS};
use crate::univariate::{begg_from_variances, bonferroni_combine, egger_from_columns, TestResult};
use crate::heterogeneity::dl_fit_variances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Msset,
    MssetSmooth,
    /// Egger on the first outcome.
    Egger1,
    /// Egger on every outcome, Bonferroni-combined.
    Egger,
    Egger1Smooth,
    EggerSmooth,
    Begg1,
    Begg,
}

impl TestKind {
    pub const ALL: [TestKind; 8] = [
        TestKind::Msset,
        TestKind::MssetSmooth,
        TestKind::Egger1,
        TestKind::Egger,
        TestKind::Egger1Smooth,
        TestKind::EggerSmooth,
        TestKind::Begg1,
        TestKind::Begg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Msset => "msset",
            TestKind::MssetSmooth => "msset-smooth",
            TestKind::Egger1 => "egger1",
            TestKind::Egger => "egger",
            TestKind::Egger1Smooth => "egger1-smooth",
            TestKind::EggerSmooth => "egger-smooth",
            TestKind::Begg1 => "begg1",
            TestKind::Begg => "begg",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| MetaError::Config(format!("unknown test '{s}'")))
    }

    fn smooths(self) -> bool {
        matches!(self, TestKind::MssetSmooth | TestKind::Egger1Smooth | TestKind::EggerSmooth)
    }
}

/// Variance used to form Begg's deviates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeggVariance {
    /// Within-study variances only (the classic rank test).
    #[default]
    FixedEffect,
    /// Within-study variances plus the DerSimonian–Laird τ̂².
    RandomEffects,
}

/// Case-control design for simulated binary outcomes.
///
/// Exposure among controls has probability `control_exposure`; among cases the
/// log odds of exposure are shifted by the study's true log odds ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryDesign {
    pub cases: (u64, u64),
    pub controls: (u64, u64),
    pub control_exposure: (f64, f64),
}

impl Default for BinaryDesign {
    fn default() -> Self {
        Self {
            cases: (20, 200),
            controls: (20, 200),
            control_exposure: (0.5, 0.5),
        }
    }
}

impl BinaryDesign {
    fn check(&self) -> Result<()> {
        let (c0, c1) = self.cases;
        let (k0, k1) = self.controls;
        let (p0, p1) = self.control_exposure;
        if c0 == 0 || k0 == 0 || c1 < c0 || k1 < k0 || !(p0 > 0.0 && p1 < 1.0 && p0 <= p1) {
            return Err(MetaError::Config(format!("invalid binary design {self:?}")));
        }
        Ok(())
    }

    fn draw_table<R: Rng + ?Sized>(&self, log_or: f64, rng: &mut R) -> TwoByTwo {
        let n_cases = rng.random_range(self.cases.0..=self.cases.1);
        let n_controls = rng.random_range(self.controls.0..=self.controls.1);
        let (lo, hi) = self.control_exposure;
        let p0 = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let logit1 = (p0 / (1.0 - p0)).ln() + log_or;
        let p1 = 1.0 / (1.0 + (-logit1).exp());
        let a = Binomial::new(n_cases, p1).expect("valid p").sample(rng);
        let b = Binomial::new(n_controls, p0).expect("valid p").sample(rng);
        TwoByTwo::new(a as f64, b as f64, (n_cases - a) as f64, (n_controls - b) as f64)
    }
}

/// Kind of simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Continuous,
    /// Outcome 1 is a log odds ratio from simulated 2×2 counts; the others are continuous.
    MixedBinary(BinaryDesign),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n_list: Vec<usize>,
    pub tau2_list: Vec<f64>,
    pub n_outcomes: usize,
    /// Overall effects, one per outcome.
    pub beta: Vec<f64>,
    pub rho_w: f64,
    pub rho_b: f64,
    pub s_dist: StderrDist,
    pub scenario: ScenarioSpec,
    pub alpha: f64,
    pub replicates: usize,
    pub tests: Vec<TestKind>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub data: DataKind,
    pub begg_variance: BeggVariance,
    /// Where the MSSET sandwich is evaluated.
    pub evaluation: EvaluationPoint,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_list: vec![25, 50, 100],
            tau2_list: vec![0.9],
            n_outcomes: 2,
            beta: vec![0.0, 0.0],
            rho_w: 0.0,
            rho_b: 0.0,
            s_dist: StderrDist::default(),
            scenario: ScenarioSpec::none(),
            alpha: 0.10,
            replicates: 5000,
            tests: vec![TestKind::Msset, TestKind::Egger1, TestKind::Egger, TestKind::Begg1, TestKind::Begg],
            seed: 1,
            threads: None,
            data: DataKind::Continuous,
            begg_variance: BeggVariance::FixedEffect,
            evaluation: EvaluationPoint::default(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| MetaError::Config(format!("{key}: cannot parse '{}'", v.trim())))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| MetaError::Config(format!("{key}: cannot parse '{}'", value.trim())))
}

fn parse_pair<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)> {
    match parse_list::<T>(key, value)?.as_slice() {
        [x] => Ok((*x, *x)),
        [x, y] => Ok((*x, *y)),
        _ => Err(MetaError::Config(format!("{key}: expected one or two values"))),
    }
}

impl ExperimentConfig {
    /// Parse a flat `key = value` file. Blank lines and `#` comments are ignored;
    /// unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(MetaError::Parse {
                line: lineno + 1,
                message: "expected 'key = value'".into(),
            })?;
            let key = k.trim().to_ascii_lowercase();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(MetaError::Parse {
                    line: lineno + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }

        let mut cfg = Self::default();
        let mut design = BinaryDesign::default();
        let mut binary = false;
        let mut s_mean = 0.3;
        let mut s_sd = 0.5;
        let mut beta: Option<Vec<f64>> = None;
        let mut grid: Option<Vec<f64>> = None;
        for (key, value) in &entries {
            let v = value.as_str();
            match key.as_str() {
                "n" => cfg.n_list = parse_list(key, v)?,
                "tau2" => cfg.tau2_list = parse_list(key, v)?,
                "outcomes" | "j" => cfg.n_outcomes = parse_one(key, v)?,
                "beta" => beta = Some(parse_list(key, v)?),
                "rho_w" => cfg.rho_w = parse_one(key, v)?,
                "rho_b" => cfg.rho_b = parse_one(key, v)?,
                "s_mean" => s_mean = parse_one(key, v)?,
                "s_sd" => s_sd = parse_one(key, v)?,
                "scenario" => cfg.scenario = ScenarioSpec::from_name(v)?,
                "grid" => grid = Some(parse_list(key, v)?),
                "alpha" => cfg.alpha = parse_one(key, v)?,
                "replicates" => cfg.replicates = parse_one(key, v)?,
                "tests" => {
                    cfg.tests = v
                        .split(',')
                        .map(TestKind::from_name)
                        .collect::<Result<Vec<_>>>()?
                }
                "seed" => cfg.seed = parse_one(key, v)?,
                "threads" => cfg.threads = Some(parse_one(key, v)?),
                "data" => {
                    binary = match v.to_ascii_lowercase().as_str() {
                        "continuous" => false,
                        "mixed-binary" | "binary" => true,
                        other => return Err(MetaError::Config(format!("unknown data kind '{other}'"))),
                    }
                }
                "cases" => design.cases = parse_pair(key, v)?,
                "controls" => design.controls = parse_pair(key, v)?,
                "control_exposure" => design.control_exposure = parse_pair(key, v)?,
                "begg" => {
                    cfg.begg_variance = match v.to_ascii_lowercase().as_str() {
                        "fixed" | "fixed-effect" => BeggVariance::FixedEffect,
                        "random" | "random-effects" => BeggVariance::RandomEffects,
                        other => return Err(MetaError::Config(format!("unknown begg variance '{other}'"))),
                    }
                }
                "evaluation" => {
                    cfg.evaluation = match v.to_ascii_lowercase().as_str() {
                        "null" | "null-restricted" => EvaluationPoint::NullRestricted,
                        "unrestricted" => EvaluationPoint::Unrestricted,
                        other => return Err(MetaError::Config(format!("unknown evaluation point '{other}'"))),
                    }
                }
                other => return Err(MetaError::Config(format!("unknown key '{other}'"))),
            }
        }
        cfg.s_dist = StderrDist::SquaredNormal { mean: s_mean, sd: s_sd };
        cfg.beta = match beta {
            Some(b) if b.len() == 1 => vec![b[0]; cfg.n_outcomes],
            Some(b) => b,
            None => vec![0.0; cfg.n_outcomes],
        };
        if let Some(per_bin) = grid {
            if per_bin.len() != DEFAULT_CUTPOINTS.len() + 1 {
                return Err(MetaError::Config("grid needs four per-bin probabilities".into()));
            }
            let g = PublicationGrid::from_worst_bin(DEFAULT_CUTPOINTS.to_vec(), &per_bin)?;
            cfg.scenario = ScenarioSpec::custom(g);
        }
        if binary {
            cfg.data = DataKind::MixedBinary(design);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(MetaError::Config("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MetaError::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 3) {
            return Err(MetaError::Config("every n must be at least 3".into()));
        }
        if self.tau2_list.is_empty() || self.tau2_list.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(MetaError::Config("tau2 values must be finite and nonnegative".into()));
        }
        if self.tests.is_empty() {
            return Err(MetaError::Config("no tests requested".into()));
        }
        if self.beta.len() != self.n_outcomes {
            return Err(MetaError::Config(format!(
                "beta has {} entries for {} outcomes",
                self.beta.len(),
                self.n_outcomes
            )));
        }
        if self.threads == Some(0) {
            return Err(MetaError::Config("threads must be at least 1".into()));
        }
        if let DataKind::MixedBinary(d) = self.data {
            d.check()?;
        }
        self.params(self.tau2_list[0]).map(|_| ())
    }

    fn params(&self, tau2: f64) -> Result<ModelParams> {
        ModelParams::exchangeable(self.beta.clone(), vec![tau2; self.n_outcomes], self.rho_w, self.rho_b)?
            .with_s_dist(self.s_dist)
    }
}

/// Rejection tally of one test in one `(n, τ²)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub n: usize,
    pub tau2: f64,
    pub test: TestKind,
    pub replicates: usize,
    /// Replicates on which the test could be computed.
    pub valid: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub alpha: f64,
    pub seed: u64,
    /// Replicates whose dataset could not be simulated at all.
    pub generation_failures: Vec<usize>,
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn cell(&self, n: usize, tau2: f64, test: TestKind) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.n == n && c.tau2 == tau2 && c.test == test)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "tau2", "test", "replicates", "valid", "failures", "rejections", "rate", "mc_se"])?;
        for c in &self.cells {
            w.write_record([
                c.n.to_string(),
                c.tau2.to_string(),
                c.test.name().to_string(),
                c.replicates.to_string(),
                c.valid.to_string(),
                c.failures.to_string(),
                c.rejections.to_string(),
                format!("{:.6}", c.rate),
                format!("{:.6}", c.mc_se),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcomes whose every reporting study carries 2×2 counts.
pub fn binary_outcomes(data: &MetaDataset) -> Vec<usize> {
    (0..data.n_outcomes())
        .filter(|&j| {
            let idx = data.reporting_index(j);
            !idx.is_empty() && idx.iter().all(|&i| data.studies[i].counts_for(j).is_some())
        })
        .collect()
}

/// Egger's test on one outcome, with the smoothed variance when `smooth`.
pub fn egger_outcome(data: &MetaDataset, outcome: usize, smooth: bool) -> Result<TestResult> {
    let cols = outcome_columns(data, outcome, smooth, true)?;
    egger_from_columns(&cols.effects, &cols.variances, true)
}

pub fn begg_outcome(data: &MetaDataset, outcome: usize, variance: BeggVariance) -> Result<TestResult> {
    let cols = outcome_columns(data, outcome, false, true)?;
    let tau2 = match variance {
        BeggVariance::FixedEffect => 0.0,
        BeggVariance::RandomEffects => dl_fit_variances(&cols.effects, &cols.variances)?.tau2,
    };
    begg_from_variances(&cols.effects, &cols.variances, tau2)
}

/// Method variants shared by the tests of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TestSettings {
    pub begg_variance: BeggVariance,
    pub evaluation: EvaluationPoint,
}

/// p-value of one test on one dataset.
pub fn evaluate_test(test: TestKind, data: &MetaDataset, cfg: &TestSettings) -> Result<f64> {
    let binary = if test.smooths() { binary_outcomes(data) } else { Vec::new() };
    let smooth = |j: usize| binary.contains(&j);
    let all = 0..data.n_outcomes();
    let result = match test {
        TestKind::Msset => {
            let options = MssetOptions {
                evaluation: cfg.evaluation,
                ..MssetOptions::default()
            };
            run_msset(data, &options)?.p_value
        }
        TestKind::MssetSmooth => {
            let options = MssetOptions {
                evaluation: cfg.evaluation,
                ..MssetOptions::smoothed(binary.clone())
            };
            run_msset(data, &options)?.p_value
        }
        TestKind::Egger1 | TestKind::Egger1Smooth => egger_outcome(data, 0, smooth(0))?.p_value,
        TestKind::Egger | TestKind::EggerSmooth => {
            let per: Vec<TestResult> = all.map(|j| egger_outcome(data, j, smooth(j))).collect::<Result<_>>()?;
            bonferroni_combine(&per)?.p_value
        }
        TestKind::Begg1 => begg_outcome(data, 0, cfg.begg_variance)?.p_value,
        TestKind::Begg => {
            let per: Vec<TestResult> = all.map(|j| begg_outcome(data, j, cfg.begg_variance)).collect::<Result<_>>()?;
            bonferroni_combine(&per)?.p_value
        }
    };
    Ok(result)
}

/// Studies with outcome 0 a simulated log odds ratio and the rest continuous.
pub(crate) fn generate_mixed_with<R: Rng + ?Sized>(
    params: &ModelParams,
    design: &BinaryDesign,
    m: usize,
    id_offset: usize,
    rng: &mut R,
) -> Result<Vec<StudyRecord>> {
    let j = params.n_outcomes();
    let omega_factor = covariance_factor(&params.between_covariance());
    (0..m)
        .map(|i| {
            let theta = sample_mvn(&params.beta, &omega_factor, rng);
            let table = design.draw_table(theta[0], rng);
            let used = if table.has_zero_cell() { table.corrected() } else { table };
            let mut measurements = vec![Some(OutcomeMeasurement::new(
                used.log_odds_ratio(),
                used.naive_variance().sqrt(),
            )?)];
            let mut counts = vec![Some(table)];
            for t in theta.iter().skip(1) {
                let s = params.s_dist.sample(rng);
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                measurements.push(Some(OutcomeMeasurement::new(t + s * e, s)?));
                counts.push(None);
            }
            debug_assert_eq!(measurements.len(), j);
            Ok(StudyRecord::new(format!("s{}", id_offset + i + 1), measurements).with_counts(counts))
        })
        .collect()
}

/// Simulate one dataset of `n` published studies for an experiment cell.
pub fn simulate_cell_dataset(cfg: &ExperimentConfig, n: usize, tau2: f64, seed: u64) -> Result<MetaDataset> {
    let params = cfg.params(tau2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let studies = match cfg.data {
        DataKind::Continuous => select_n_with(n, &cfg.scenario, &params.tau2, &mut rng, |m, off, r| {
            generate_with_rng(&params, m, off, r)
        })?,
        DataKind::MixedBinary(design) => select_n_with(n, &cfg.scenario, &params.tau2, &mut rng, |m, off, r| {
            generate_mixed_with(&params, &design, m, off, r)
        })?,
    };
    Ok(MetaDataset::new(studies, MetaDataset::default_labels(cfg.n_outcomes)))
}

/// p-values of every configured test on one replicate (`None` = failed).
fn run_replicate(cfg: &ExperimentConfig, n: usize, tau2: f64, seed: u64) -> Option<Vec<Option<f64>>> {
    let data = simulate_cell_dataset(cfg, n, tau2, seed).ok()?;
    let settings = TestSettings {
        begg_variance: cfg.begg_variance,
        evaluation: cfg.evaluation,
    };
    Some(
        cfg.tests
            .iter()
            .map(|&t| evaluate_test(t, &data, &settings).ok())
            .collect(),
    )
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let work = || -> ExperimentResult {
        let mut cells = Vec::new();
        let mut generation_failures = Vec::new();
        let mut cell_index = 0u64;
        for &n in &cfg.n_list {
            for &tau2 in &cfg.tau2_list {
                let reps: Vec<Option<Vec<Option<f64>>>> = (0..cfg.replicates as u64)
                    .into_par_iter()
                    .map(|r| run_replicate(cfg, n, tau2, derive_seed(cfg.seed, &[cell_index, r])))
                    .collect();
                generation_failures.push(reps.iter().filter(|r| r.is_none()).count());
                for (k, &test) in cfg.tests.iter().enumerate() {
                    let mut valid = 0;
                    let mut rejections = 0;
                    for p in reps.iter().flatten().filter_map(|ps| ps[k]) {
                        valid += 1;
                        if p <= cfg.alpha {
                            rejections += 1;
                        }
                    }
                    let rate = if valid > 0 { rejections as f64 / valid as f64 } else { f64::NAN };
                    let mc_se = if valid > 0 { (rate * (1.0 - rate) / valid as f64).sqrt() } else { f64::NAN };
                    cells.push(CellResult {
                        n,
                        tau2,
                        test,
                        replicates: cfg.replicates,
                        valid,
                        failures: cfg.replicates - valid,
                        rejections,
                        rate,
                        mc_se,
                    });
                }
                cell_index += 1;
            }
        }
        ExperimentResult {
            scenario: cfg.scenario.label().to_string(),
            alpha: cfg.alpha,
            seed: cfg.seed,
            generation_failures,
            cells,
        }
    };
    match cfg.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| MetaError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(tests: Vec<TestKind>) -> ExperimentConfig {
        ExperimentConfig {
            n_list: vec![15],
            tau2_list: vec![0.5],
            replicates: 40,
            tests,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn parses_flat_config() {
        let text = "# null cell\nn = 10, 50\ntau2 = 0.1,0.9 # two values\nbeta = 0.2\nreplicates = 7\n\
                    tests = msset, egger, begg1\nscenario = P\nseed = 42\nthreads = 2\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.n_list, vec![10, 50]);
        assert_eq!(cfg.tau2_list, vec![0.1, 0.9]);
        assert_eq!(cfg.beta, vec![0.2, 0.2]);
        assert_eq!(cfg.tests, vec![TestKind::Msset, TestKind::Egger, TestKind::Begg1]);
        assert_eq!(cfg.scenario, ScenarioSpec::p());
        assert_eq!((cfg.seed, cfg.threads, cfg.replicates), (42, Some(2), 7));
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("alpha = 0").is_err());
        assert!(ExperimentConfig::parse("replicates = 0").is_err());
        assert!(matches!(ExperimentConfig::parse("n 10"), Err(MetaError::Parse { line: 1, .. })));
        assert!(ExperimentConfig::parse("n = 10\nn = 20").is_err());
        let g = ExperimentConfig::parse("grid = 1, 0.5, 0.2, 0.1\ndata = mixed-binary\ncases = 30, 60").unwrap();
        assert_eq!(g.scenario.kind, crate::selection::ScenarioKind::Custom);
        assert!(matches!(g.data, DataKind::MixedBinary(d) if d.cases == (30, 60)));
    }

    #[test]
    fn alpha_one_rejects_everything() {
        let cfg = ExperimentConfig {
            alpha: 1.0,
            ..small(vec![TestKind::Msset, TestKind::Egger])
        };
        let r = run_experiment(&cfg).unwrap();
        for c in &r.cells {
            assert_eq!(c.rate, 1.0);
            assert_eq!(c.mc_se, 0.0);
            assert_eq!(c.valid + c.failures, c.replicates);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let base = ExperimentConfig {
            scenario: ScenarioSpec::p(),
            ..small(TestKind::ALL.to_vec())
        };
        let one = run_experiment(&ExperimentConfig { threads: Some(1), ..base.clone() }).unwrap();
        let three = run_experiment(&ExperimentConfig { threads: Some(3), ..base }).unwrap();
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    }

    #[test]
    fn mixed_binary_dataset_shape() {
        let cfg = ExperimentConfig {
            data: DataKind::MixedBinary(BinaryDesign::default()),
            ..small(vec![TestKind::MssetSmooth])
        };
        let d = simulate_cell_dataset(&cfg, 30, 2.5, 4).unwrap();
        assert_eq!(d.n_studies(), 30);
        assert_eq!(binary_outcomes(&d), vec![0]);
        for s in &d.studies {
            let t = s.counts_for(0).unwrap();
            let used = if t.has_zero_cell() { t.corrected() } else { *t };
            assert!((s.measurements[0].unwrap().effect - used.log_odds_ratio()).abs() < 1e-12);
        }
        for t in [TestKind::MssetSmooth, TestKind::EggerSmooth, TestKind::Egger1] {
            let p = evaluate_test(t, &d, &TestSettings::default()).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = run_experiment(&small(vec![TestKind::Msset, TestKind::Begg])).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,tau2,test,replicates,valid,failures,rejections,rate,mc_se");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("15,0.5,begg,40,"));
    }
}
