//! The multivariate small-study-effect score test.
//!
//! Each outcome contributes an Egger-type regression `SND = a + b·P + ε`
//! with τ² replaced by its DerSimonian–Laird estimate. The per-outcome
//! pseudolikelihoods are summed without any within-study correlation, the
//! pseudo-score for `a` is taken at the null fit `a = 0`, and its scale is
//! corrected by the mean eigenvalue of `(I₀ᵃᵃ)⁻¹ Σₐₐ`, where `Σₐₐ` comes from a
//! stacked estimating-equation sandwich that carries the uncertainty of τ̂²
//! and the cross-outcome dependence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::heterogeneity::{outcome_columns, DlFit, OutcomeColumns, OutcomeTransform};
use crate::model::{validate_dataset, MetaDataset, MIN_STUDIES_PER_OUTCOME};
use crate::seeds::derive_seed;
use crate::special::chi_square_tail;
use crate::univariate::egger_fit;

/// Which study count fills the `aa` diagonal of the information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MConvention {
    /// `m_j`, the number of studies reporting outcome `j`.
    #[default]
    PerOutcome,
    /// The total number of studies for every outcome.
    Total,
}

/// Where the sandwich is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluationPoint {
    /// `a = 0`, `b = b̃(0)`.
    #[default]
    NullRestricted,
    /// Unrestricted least-squares `(â, b̂)`.
    Unrestricted,
}

/// Which estimating equations enter the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SandwichScope {
    /// Regression equations stacked with the DerSimonian–Laird equations for `(μ, τ²)`.
    Stacked,
    /// Regression equations only, with `τ̂²` held fixed.
    #[default]
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum SigmaAaMethod {
    #[default]
    Sandwich,
    Bootstrap { reps: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MssetOptions {
    pub m_convention: MConvention,
    pub sigma_aa: SigmaAaMethod,
    pub evaluation: EvaluationPoint,
    pub scope: SandwichScope,
    /// Substitute the smoothed variance for outcomes listed in `binary_outcomes`.
    pub smooth_binary: bool,
    pub binary_outcomes: Vec<usize>,
    pub correct_zero_cells: bool,
}

impl Default for MssetOptions {
    fn default() -> Self {
        Self {
            m_convention: MConvention::PerOutcome,
            sigma_aa: SigmaAaMethod::Sandwich,
            evaluation: EvaluationPoint::NullRestricted,
            scope: SandwichScope::Regression,
            smooth_binary: false,
            binary_outcomes: Vec::new(),
            correct_zero_cells: true,
        }
    }
}

impl MssetOptions {
    pub fn smoothed(binary_outcomes: Vec<usize>) -> Self {
        Self {
            smooth_binary: true,
            binary_outcomes,
            ..Self::default()
        }
    }

    fn smooths(&self, outcome: usize) -> bool {
        self.smooth_binary && self.binary_outcomes.contains(&outcome)
    }
}

/// Gather every outcome's columns, attaching outcome labels to errors.
pub fn collect_columns(data: &MetaDataset, options: &MssetOptions) -> Result<Vec<OutcomeColumns>> {
    (0..data.n_outcomes())
        .map(|j| {
            outcome_columns(data, j, options.smooths(j), options.correct_zero_cells)
                .map_err(|e| e.in_outcome("heterogeneity", data.label(j)))
        })
        .collect()
}

/// The null-restricted fit shared by the score, information and sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub b0: Vec<f64>,
    pub mu_fe: Vec<f64>,
    pub tau2_hat: Vec<f64>,
    pub transforms: Vec<OutcomeTransform>,
    pub columns: Vec<OutcomeColumns>,
    pub dl: Vec<DlFit>,
    /// Total number of studies in the dataset.
    pub n_studies: usize,
}

impl NullFit {
    pub fn n_outcomes(&self) -> usize {
        self.b0.len()
    }
}

/// Through-origin least-squares slope of SND on P.
pub fn null_slope(transform: &OutcomeTransform) -> Result<f64> {
    if transform.is_empty() {
        return Err(MetaError::InvalidInput("empty transform".into()));
    }
    let spp: f64 = transform.precision.iter().map(|p| p * p).sum();
    if !(spp > 0.0) {
        return Err(MetaError::InvalidInput("sum of squared precisions is zero".into()));
    }
    let sxp: f64 = transform
        .snd
        .iter()
        .zip(&transform.precision)
        .map(|(s, p)| s * p)
        .sum();
    Ok(sxp / spp)
}

pub fn fit_null_from_columns(columns: Vec<OutcomeColumns>, n_studies: usize, labels: &[String]) -> Result<NullFit> {
    let mut b0 = Vec::with_capacity(columns.len());
    let mut mu_fe = Vec::with_capacity(columns.len());
    let mut tau2_hat = Vec::with_capacity(columns.len());
    let mut transforms = Vec::with_capacity(columns.len());
    let mut dl = Vec::with_capacity(columns.len());
    for (j, col) in columns.iter().enumerate() {
        let label = labels.get(j).map(String::as_str).unwrap_or("?");
        if col.len() < MIN_STUDIES_PER_OUTCOME {
            return Err(MetaError::TooFewStudies {
                needed: MIN_STUDIES_PER_OUTCOME,
                got: col.len(),
            }
            .in_outcome("msset", label));
        }
        let fit = col.dl_fit().map_err(|e| e.in_outcome("heterogeneity", label))?;
        let t = col.transform(fit.tau2);
        b0.push(null_slope(&t).map_err(|e| e.in_outcome("msset", label))?);
        mu_fe.push(fit.mu_fe);
        tau2_hat.push(fit.tau2);
        transforms.push(t);
        dl.push(fit);
    }
    Ok(NullFit {
        b0,
        mu_fe,
        tau2_hat,
        transforms,
        columns,
        dl,
        n_studies,
    })
}

pub fn fit_null(data: &MetaDataset, options: &MssetOptions) -> Result<NullFit> {
    let columns = collect_columns(data, options)?;
    fit_null_from_columns(columns, data.n_studies(), &data.outcome_labels)
}

/// `U_j = Σ SND − b̃_j(0) Σ P` over the studies reporting outcome `j`.
pub fn pseudo_score(fit: &NullFit) -> Vec<f64> {
    fit.transforms
        .iter()
        .zip(&fit.b0)
        .map(|(t, b)| t.snd.iter().sum::<f64>() - b * t.precision.iter().sum::<f64>())
        .collect()
}

/// Diagonal blocks of the negative Hessian at the null and the `aa` block of its inverse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationBlocks {
    pub i_aa: Vec<f64>,
    pub i_ab: Vec<f64>,
    pub i_bb: Vec<f64>,
    /// Diagonal of I₀ᵃᵃ, `(I_aa − I_ab² / I_bb)⁻¹`.
    pub aa_inverse: Vec<f64>,
}

impl InformationBlocks {
    pub fn from_diagonals(i_aa: Vec<f64>, i_ab: Vec<f64>, i_bb: Vec<f64>) -> Result<Self> {
        let mut aa_inverse = Vec::with_capacity(i_aa.len());
        for j in 0..i_aa.len() {
            let schur = i_aa[j] - i_ab[j] * i_ab[j] / i_bb[j];
            if !(i_bb[j] > 0.0 && schur > 1e-12 * i_aa[j]) {
                return Err(MetaError::SingularInformation(j));
            }
            aa_inverse.push(1.0 / schur);
        }
        Ok(Self {
            i_aa,
            i_ab,
            i_bb,
            aa_inverse,
        })
    }

    pub fn aa_inverse_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.aa_inverse))
    }

    /// The full `2J × 2J` information, parameters ordered `(a_1..a_J, b_1..b_J)`.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let j = self.i_aa.len();
        let mut m = DMatrix::zeros(2 * j, 2 * j);
        for k in 0..j {
            m[(k, k)] = self.i_aa[k];
            m[(k, j + k)] = self.i_ab[k];
            m[(j + k, k)] = self.i_ab[k];
            m[(j + k, j + k)] = self.i_bb[k];
        }
        m
    }
}

pub fn information_aa_block(fit: &NullFit, convention: MConvention) -> Result<InformationBlocks> {
    let i_aa = fit
        .transforms
        .iter()
        .map(|t| match convention {
            MConvention::PerOutcome => t.len() as f64,
            MConvention::Total => fit.n_studies as f64,
        })
        .collect();
    let i_ab = fit.transforms.iter().map(|t| t.precision.iter().sum()).collect();
    let i_bb = fit
        .transforms
        .iter()
        .map(|t| t.precision.iter().map(|p| p * p).sum())
        .collect();
    InformationBlocks::from_diagonals(i_aa, i_ab, i_bb)
}

/// Stacked estimating equations `(a, b, μ, τ²)` per outcome.
///
/// Per reporting study, with `v` the within-study variance, `w = 1/v` and
/// `P = (v + τ²)^(-1/2)`:
///   ψ_a = yP − a − bP,  ψ_b = ψ_a·P,  ψ_μ = w(y − μ),
///   ψ_τ = w(y − μ)² − (m_j − 1)/m_j − (c_j/m_j)·τ².
/// Summing ψ_μ and ψ_τ over studies reproduces the DerSimonian–Laird equations.
pub(crate) struct StackedSystem<'a> {
    columns: &'a [OutcomeColumns],
    n_studies: usize,
    c: Vec<f64>,
}

impl<'a> StackedSystem<'a> {
    pub(crate) fn new(columns: &'a [OutcomeColumns], dl: &[DlFit], n_studies: usize) -> Self {
        Self {
            columns,
            n_studies,
            c: dl.iter().map(|f| f.c).collect(),
        }
    }

    #[cfg(test)]
    pub(crate) fn n_params(&self) -> usize {
        4 * self.columns.len()
    }

    /// Per-study estimating functions, one row per study (zero where not reported).
    pub(crate) fn psi(&self, theta: &[f64]) -> DMatrix<f64> {
        let jn = self.columns.len();
        let mut out = DMatrix::zeros(self.n_studies, 4 * jn);
        for (j, col) in self.columns.iter().enumerate() {
            let (a, b, mu, tau2) = (theta[j], theta[jn + j], theta[2 * jn + j], theta[3 * jn + j]);
            let mj = col.len() as f64;
            for (k, &i) in col.reporting_index.iter().enumerate() {
                let y = col.effects[k];
                let v = col.variances[k];
                let w = 1.0 / v;
                let p = 1.0 / (v + tau2).sqrt();
                let r = y * p - a - b * p;
                out[(i, j)] = r;
                out[(i, jn + j)] = r * p;
                out[(i, 2 * jn + j)] = w * (y - mu);
                out[(i, 3 * jn + j)] = w * (y - mu) * (y - mu) - (mj - 1.0) / mj - self.c[j] / mj * tau2;
            }
        }
        out
    }

    /// `Σ_i ∂ψ_i/∂θ`, analytic.
    pub(crate) fn jacobian_sum(&self, theta: &[f64]) -> DMatrix<f64> {
        let jn = self.columns.len();
        let mut d = DMatrix::zeros(4 * jn, 4 * jn);
        for (j, col) in self.columns.iter().enumerate() {
            let (ia, ib, imu, it) = (j, jn + j, 2 * jn + j, 3 * jn + j);
            let (a, b, mu, tau2) = (theta[ia], theta[ib], theta[imu], theta[it]);
            let mj = col.len() as f64;
            for k in 0..col.len() {
                let y = col.effects[k];
                let v = col.variances[k];
                let w = 1.0 / v;
                let tot = v + tau2;
                let p = 1.0 / tot.sqrt();
                let dp = -0.5 * p / tot;
                let r = y * p - a - b * p;
                let dr = (y - b) * dp;
                d[(ia, ia)] -= 1.0;
                d[(ia, ib)] -= p;
                d[(ia, it)] += dr;
                d[(ib, ia)] -= p;
                d[(ib, ib)] -= p * p;
                d[(ib, it)] += dr * p + r * dp;
                d[(imu, imu)] -= w;
                d[(it, imu)] -= 2.0 * w * (y - mu);
                d[(it, it)] -= self.c[j] / mj;
            }
        }
        d
    }
}

/// Result of the sandwich variance computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    /// `m · [A⁻¹ B A⁻ᵀ]_aa`, the asymptotic covariance of `√m (â − a)`.
    pub sigma_aa: DMatrix<f64>,
    /// Full `A⁻¹ B A⁻ᵀ` over the parameters in scope, ordered `a, b, μ, τ²`.
    pub covariance: DMatrix<f64>,
    /// Outcomes whose τ̂² sits at the zero truncation boundary.
    pub tau2_at_boundary: Vec<bool>,
}

pub(crate) fn stacked_point(fit: &NullFit, point: EvaluationPoint) -> Result<Vec<f64>> {
    let jn = fit.n_outcomes();
    let mut theta = vec![0.0; 4 * jn];
    for j in 0..jn {
        let (a, b) = match point {
            EvaluationPoint::NullRestricted => (0.0, fit.b0[j]),
            EvaluationPoint::Unrestricted => {
                let t = &fit.transforms[j];
                let f = egger_fit(&t.precision, &t.snd)?;
                (f.intercept, f.slope)
            }
        };
        theta[j] = a;
        theta[jn + j] = b;
        theta[2 * jn + j] = fit.mu_fe[j];
        theta[3 * jn + j] = fit.tau2_hat[j];
    }
    Ok(theta)
}

pub fn sigma_aa_sandwich(fit: &NullFit, point: EvaluationPoint) -> Result<SandwichEstimate> {
    sigma_aa_sandwich_scoped(fit, point, SandwichScope::default())
}

pub fn sigma_aa_sandwich_scoped(fit: &NullFit, point: EvaluationPoint, scope: SandwichScope) -> Result<SandwichEstimate> {
    let jn = fit.n_outcomes();
    let system = StackedSystem::new(&fit.columns, &fit.dl, fit.n_studies);
    let theta = stacked_point(fit, point)?;
    let mut bread = -system.jacobian_sum(&theta);
    let mut psi = system.psi(&theta);
    if scope == SandwichScope::Regression {
        bread = bread.view((0, 0), (2 * jn, 2 * jn)).into_owned();
        psi = psi.columns(0, 2 * jn).into_owned();
    }
    let meat = psi.transpose() * &psi;

    // condition number after equilibration, so that badly scaled but
    // well-posed blocks (tiny standard errors) are not rejected
    let scale: Vec<f64> = bread.diagonal().iter().map(|d| 1.0 / d.abs().sqrt().max(1e-300)).collect();
    let scaled = DMatrix::from_fn(bread.nrows(), bread.ncols(), |r, c| bread[(r, c)] * scale[r] * scale[c]);
    let scaled_inv = scaled.clone().try_inverse().ok_or(MetaError::SandwichSingular)?;
    let cond = scaled.lp_norm(1) * scaled_inv.lp_norm(1);
    if !cond.is_finite() || cond > 1e13 {
        return Err(MetaError::SandwichSingular);
    }
    let bread_inv = DMatrix::from_fn(bread.nrows(), bread.ncols(), |r, c| scaled_inv[(r, c)] * scale[r] * scale[c]);
    let covariance = &bread_inv * meat * bread_inv.transpose();
    let m = fit.n_studies as f64;
    let mut sigma_aa = covariance.view((0, 0), (jn, jn)).into_owned() * m;
    // symmetrize away rounding
    sigma_aa = (&sigma_aa + sigma_aa.transpose()) * 0.5;
    Ok(SandwichEstimate {
        sigma_aa,
        covariance,
        tau2_at_boundary: fit.dl.iter().map(|f| f.truncated).collect(),
    })
}

/// Unrestricted intercepts `â_j` for each resample given as study index lists.
/// Returns `None` for a resample in which some outcome is unusable.
pub fn bootstrap_intercepts(
    data: &MetaDataset,
    options: &MssetOptions,
    index_sets: &[Vec<usize>],
) -> Vec<Option<Vec<f64>>> {
    index_sets
        .par_iter()
        .map(|idx| resample_intercepts(data, options, idx))
        .collect()
}

fn resample_intercepts(data: &MetaDataset, options: &MssetOptions, idx: &[usize]) -> Option<Vec<f64>> {
    let resampled = MetaDataset::new(
        idx.iter().map(|&i| data.studies[i].clone()).collect(),
        data.outcome_labels.clone(),
    );
    let columns = collect_columns(&resampled, options).ok()?;
    columns
        .iter()
        .map(|col| {
            if col.len() < MIN_STUDIES_PER_OUTCOME {
                return None;
            }
            let tau2 = col.dl_fit().ok()?.tau2;
            let t = col.transform(tau2);
            egger_fit(&t.precision, &t.snd).ok().map(|f| f.intercept)
        })
        .collect()
}

const BOOTSTRAP_RETRY_CAP: usize = 100;

/// Nonparametric bootstrap of `m · cov(â)`: resample studies with replacement,
/// refit τ̂² and the unrestricted regressions.
pub fn sigma_aa_bootstrap_oracle(
    data: &MetaDataset,
    options: &MssetOptions,
    reps: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if reps < 2 {
        return Err(MetaError::InvalidInput("bootstrap needs at least 2 replicates".into()));
    }
    let m = data.n_studies();
    let jn = data.n_outcomes();
    let draws: Vec<Result<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
            for _ in 0..BOOTSTRAP_RETRY_CAP {
                let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
                if let Some(a) = resample_intercepts(data, options, &idx) {
                    return Ok(a);
                }
            }
            Err(MetaError::BootstrapRetryCap(BOOTSTRAP_RETRY_CAP))
        })
        .collect();
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(sample_covariance(&draws, jn) * m as f64)
}

pub(crate) fn sample_covariance(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            mean[k] += r[k] / n;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for r in rows {
        for p in 0..dim {
            for q in 0..dim {
                cov[(p, q)] += (r[p] - mean[p]) * (r[q] - mean[q]);
            }
        }
    }
    cov / (n - 1.0)
}

/// Mean eigenvalue of `(I₀ᵃᵃ)⁻¹ Σₐₐ`, as a trace. NaN when I₀ᵃᵃ is singular.
pub fn mean_eigenvalue(info_aa: &DMatrix<f64>, sigma_aa: &DMatrix<f64>) -> f64 {
    match info_aa.clone().lu().solve(sigma_aa) {
        Some(solved) => solved.trace() / info_aa.nrows() as f64,
        None => f64::NAN,
    }
}

/// `λ̄ = tr((I₀ᵃᵃ)⁻¹ Σₐₐ) / J` and `MSSET = (m λ̄)⁻¹ Uᵀ I₀ᵃᵃ U`.
pub fn msset_statistic(
    score: &[f64],
    info_aa: &DMatrix<f64>,
    sigma_aa: &DMatrix<f64>,
    m: usize,
) -> Result<(f64, f64)> {
    let lambda_bar = mean_eigenvalue(info_aa, sigma_aa);
    if !(lambda_bar.is_finite() && lambda_bar > 0.0) {
        return Err(MetaError::InvalidVarianceCorrection(lambda_bar));
    }
    let u = DVector::from_column_slice(score);
    let quad = (u.transpose() * info_aa * &u)[(0, 0)];
    Ok((quad / (m as f64 * lambda_bar), lambda_bar))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MssetResult {
    pub outcome_labels: Vec<String>,
    pub m: usize,
    pub m_per_outcome: Vec<usize>,
    pub b0: Vec<f64>,
    pub tau2_hat: Vec<f64>,
    pub tau2_at_boundary: Vec<bool>,
    pub smoothed: Vec<bool>,
    pub score: Vec<f64>,
    pub info: InformationBlocks,
    /// Asymptotic covariance of `√m (â − a)` from the sandwich or bootstrap.
    pub asymptotic_cov_a: Vec<Vec<f64>>,
    /// `asymptotic_cov_a / m²`: the matrix whose eigenvalues against I₀ᵃᵃ give λ̄.
    pub sigma_aa: Vec<Vec<f64>>,
    pub lambda_bar: f64,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub sigma_aa_method: SigmaAaMethod,
    pub evaluation: EvaluationPoint,
    pub sandwich_scope: SandwichScope,
    pub m_convention: MConvention,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Full pipeline: τ̂² per outcome, transform, null fit, score, information,
/// Σₐₐ, statistic and χ²_J p-value.
pub fn run_msset(data: &MetaDataset, options: &MssetOptions) -> Result<MssetResult> {
    validate_dataset(data).into_result()?;
    let fit = fit_null(data, options)?;
    let score = pseudo_score(&fit);
    let info = information_aa_block(&fit, options.m_convention).map_err(|e| match e {
        MetaError::SingularInformation(j) => e.in_outcome("msset", data.label(j)),
        other => other,
    })?;
    let m = data.n_studies();
    let (avar, at_boundary) = match options.sigma_aa {
        SigmaAaMethod::Sandwich => {
            let s = sigma_aa_sandwich_scoped(&fit, options.evaluation, options.scope)?;
            (s.sigma_aa, s.tau2_at_boundary)
        }
        SigmaAaMethod::Bootstrap { reps, seed } => (
            sigma_aa_bootstrap_oracle(data, options, reps, seed)?,
            fit.dl.iter().map(|f| f.truncated).collect(),
        ),
    };
    let mf = m as f64;
    let sigma = &avar / (mf * mf);
    let info_aa = info.aa_inverse_matrix();
    // A score that vanishes to rounding means the null fits exactly; report 0
    // even when the variance correction degenerates with it.
    let score_vanishes = fit.transforms.iter().zip(&fit.b0).zip(&score).all(|((t, b), u)| {
        let scale = t.snd.iter().map(|v| v.abs()).sum::<f64>() + b.abs() * t.precision.iter().sum::<f64>();
        u.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)
    });
    let (statistic, lambda_bar) = if score_vanishes {
        (0.0, mean_eigenvalue(&info_aa, &sigma))
    } else {
        msset_statistic(&score, &info_aa, &sigma, m)?
    };
    let df = data.n_outcomes();
    Ok(MssetResult {
        outcome_labels: data.outcome_labels.clone(),
        m,
        m_per_outcome: fit.transforms.iter().map(|t| t.len()).collect(),
        b0: fit.b0.clone(),
        tau2_hat: fit.tau2_hat.clone(),
        tau2_at_boundary: at_boundary,
        smoothed: fit.columns.iter().map(|c| c.smoothed).collect(),
        score,
        info,
        asymptotic_cov_a: rows(&avar),
        sigma_aa: rows(&sigma),
        lambda_bar,
        statistic,
        df,
        p_value: chi_square_tail(statistic, df),
        sigma_aa_method: options.sigma_aa,
        evaluation: options.evaluation,
        sandwich_scope: options.scope,
        m_convention: options.m_convention,
    })
}
