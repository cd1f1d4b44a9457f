//! Univariate comparators: Egger's regression test, Begg's rank test and
//! the Bonferroni combination across outcomes.

use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::heterogeneity::{dl_fit_variances, OutcomeTransform};
use crate::special::{normal_two_sided, student_t_two_sided};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Number of studies (or components, for combinations).
    pub n: usize,
    pub df: Option<f64>,
    /// Egger intercept or Kendall's tau, when meaningful.
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_outcome: Vec<TestResult>,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// Ordinary least squares of SND on precision with intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EggerFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub residual_variance: f64,
}

pub fn egger_fit(precision: &[f64], snd: &[f64]) -> Result<EggerFit> {
    let m = precision.len();
    if m < 3 {
        return Err(MetaError::TooFewStudies { needed: 3, got: m });
    }
    let mf = m as f64;
    let xbar = precision.iter().sum::<f64>() / mf;
    let ybar = snd.iter().sum::<f64>() / mf;
    let sxx: f64 = precision.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let scale: f64 = precision.iter().map(|x| x * x).sum();
    if !(sxx > 1e-14 * scale) {
        return Err(MetaError::ConstantPrecision);
    }
    let sxy: f64 = precision
        .iter()
        .zip(snd)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = precision
        .iter()
        .zip(snd)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let residual_variance = rss / (mf - 2.0);
    let intercept_se = (residual_variance * (1.0 / mf + xbar * xbar / sxx)).sqrt();
    Ok(EggerFit {
        intercept,
        slope,
        intercept_se,
        residual_variance,
    })
}

/// Egger's test: t-test of the regression intercept with `m − 2` degrees of freedom.
pub fn egger_test(transform: &OutcomeTransform) -> Result<TestResult> {
    let fit = egger_fit(&transform.precision, &transform.snd)?;
    let m = transform.len();
    let df = (m - 2) as f64;
    let t = if fit.intercept == 0.0 {
        0.0
    } else if fit.intercept_se > 0.0 {
        fit.intercept / fit.intercept_se
    } else {
        return Err(MetaError::DegenerateDesign("zero residual variance".into()));
    };
    Ok(TestResult {
        method: "egger".into(),
        statistic: t,
        p_value: student_t_two_sided(t, df),
        n: m,
        df: Some(df),
        estimate: Some(fit.intercept),
        per_outcome: Vec::new(),
    })
}

/// Egger's test straight from effects and within-study variances, with τ² from
/// DerSimonian–Laird (`random_effects`) or fixed at zero.
pub fn egger_from_columns(effects: &[f64], variances: &[f64], random_effects: bool) -> Result<TestResult> {
    let tau2 = if random_effects {
        dl_fit_variances(effects, variances)?.tau2
    } else {
        0.0
    };
    let index = (0..effects.len()).collect();
    egger_test(&OutcomeTransform::from_parts(effects, variances, tau2, index))
}

/// Pair counts behind Kendall's tau.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KendallCounts {
    /// Concordant minus discordant pairs.
    pub s: i64,
    pub n: usize,
    /// Sizes of tie groups (size ≥ 2) in each variable.
    pub ties_x: Vec<usize>,
    pub ties_y: Vec<usize>,
}

fn tie_groups(sorted: &[f64]) -> Vec<usize> {
    let mut groups = Vec::new();
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                groups.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        groups.push(run);
    }
    groups
}

fn pairs(t: usize) -> i64 {
    (t * t.saturating_sub(1) / 2) as i64
}

/// Knight's O(n log n) count of concordant minus discordant pairs.
pub fn kendall_counts(x: &[f64], y: &[f64]) -> KendallCounts {
    let n = x.len();
    assert_eq!(n, y.len());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let ties_x = tie_groups(&xs);

    // joint ties (same x and same y)
    let mut joint = 0i64;
    let mut run = 1usize;
    for k in 1..n {
        if xs[k] == xs[k - 1] && ys[k] == ys[k - 1] {
            run += 1;
        } else {
            joint += pairs(run);
            run = 1;
        }
    }
    joint += pairs(run);

    let swaps = merge_count(&mut ys);
    let ties_y = tie_groups(&ys);
    let n0 = pairs(n);
    let n1: i64 = ties_x.iter().map(|&t| pairs(t)).sum();
    let n2: i64 = ties_y.iter().map(|&t| pairs(t)).sum();
    let s = n0 - n1 - n2 + joint - 2 * swaps;
    KendallCounts { s, n, ties_x, ties_y }
}

// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

impl KendallCounts {
    /// Null variance of S with the tie correction.
    pub fn variance_s(&self) -> f64 {
        let v = |t: usize| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        };
        let total = v(self.n) - self.ties_x.iter().map(|&t| v(t)).sum::<f64>() - self.ties_y.iter().map(|&t| v(t)).sum::<f64>();
        total / 18.0
    }

    /// Tau-b.
    pub fn tau(&self) -> f64 {
        let n0 = pairs(self.n) as f64;
        let n1: f64 = self.ties_x.iter().map(|&t| pairs(t) as f64).sum();
        let n2: f64 = self.ties_y.iter().map(|&t| pairs(t) as f64).sum();
        self.s as f64 / ((n0 - n1) * (n0 - n2)).sqrt()
    }
}

/// Begg–Mazumdar rank correlation test.
///
/// Deviates `(y − ȳ)/sqrt(v − 1/Σw)` with `v = s² + τ²`, `w = 1/v`, are rank
/// correlated with `v`; `z = S / sqrt(Var S)` is referred to the normal.
pub fn begg_test(effects: &[f64], stderrs: &[f64], tau2: f64) -> Result<TestResult> {
    let variances: Vec<f64> = stderrs.iter().map(|s| s * s).collect();
    begg_from_variances(effects, &variances, tau2)
}

pub fn begg_from_variances(effects: &[f64], within_var: &[f64], tau2: f64) -> Result<TestResult> {
    let m = effects.len();
    if m < 3 {
        return Err(MetaError::TooFewStudies { needed: 3, got: m });
    }
    let var: Vec<f64> = within_var.iter().map(|v| v + tau2).collect();
    if var.iter().all(|v| *v == var[0]) {
        return Err(MetaError::EqualVariances);
    }
    let sw: f64 = var.iter().map(|v| 1.0 / v).sum();
    let pooled = effects.iter().zip(&var).map(|(y, v)| y / v).sum::<f64>() / sw;
    let pooled_var = 1.0 / sw;
    let deviates: Vec<f64> = effects
        .iter()
        .zip(&var)
        .map(|(y, v)| (y - pooled) / (v - pooled_var).sqrt())
        .collect();
    let counts = kendall_counts(&deviates, &var);
    let z = counts.s as f64 / counts.variance_s().sqrt();
    Ok(TestResult {
        method: "begg".into(),
        statistic: z,
        p_value: normal_two_sided(z),
        n: m,
        df: None,
        estimate: Some(counts.tau()),
        per_outcome: Vec::new(),
    })
}

/// `p = min(1, J · min_j p_j)`; the statistic is the smallest component p-value.
pub fn bonferroni_combine(results: &[TestResult]) -> Result<TestResult> {
    if results.is_empty() {
        return Err(MetaError::InvalidInput("nothing to combine".into()));
    }
    let k = results.len();
    let min_p = results.iter().map(|r| r.p_value).fold(f64::INFINITY, f64::min);
    let method = format!("{}-bonferroni", results[0].method);
    Ok(TestResult {
        method,
        statistic: min_p,
        p_value: (k as f64 * min_p).min(1.0),
        n: k,
        df: None,
        estimate: None,
        per_outcome: results.to_vec(),
    })
}
