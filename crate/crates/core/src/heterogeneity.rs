//! Between-study variance, the standardized-deviate/precision transform and
//! the smoothed log-odds-ratio variance for binary outcomes.

use serde::Serialize;

use crate::error::{MetaError, Result};
use crate::model::{MetaDataset, TwoByTwo};

/// Pieces of the DerSimonian–Laird fit that the sandwich needs again.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlFit {
    pub tau2: f64,
    /// Inverse-variance (fixed-effect) weighted mean.
    pub mu_fe: f64,
    pub q: f64,
    /// `Σw − Σw²/Σw`.
    pub c: f64,
    /// True when the moment estimate was truncated at zero.
    pub truncated: bool,
}

/// DerSimonian–Laird fit from effects and within-study *variances*.
pub fn dl_fit_variances(effects: &[f64], variances: &[f64]) -> Result<DlFit> {
    let m = effects.len();
    if m < 2 {
        return Err(MetaError::InsufficientStudies(m));
    }
    if variances.len() != m {
        return Err(MetaError::InvalidInput("effects and variances differ in length".into()));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MetaError::InvalidInput("within-study variances must be positive".into()));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let mu_fe = w.iter().zip(effects).map(|(w, y)| w * y).sum::<f64>() / sw;
    let q: f64 = w
        .iter()
        .zip(effects)
        .map(|(w, y)| w * (y - mu_fe) * (y - mu_fe))
        .sum();
    let c = sw - sw2 / sw;
    let raw = (q - (m as f64 - 1.0)) / c;
    Ok(DlFit {
        tau2: raw.max(0.0),
        mu_fe,
        q,
        c,
        truncated: raw <= 0.0,
    })
}

/// DerSimonian–Laird moment estimate of τ².
pub fn dl_tau2(effects: &[f64], stderrs: &[f64]) -> Result<f64> {
    if stderrs.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(MetaError::InvalidInput("standard errors must be positive".into()));
    }
    let variances: Vec<f64> = stderrs.iter().map(|s| s * s).collect();
    Ok(dl_fit_variances(effects, &variances)?.tau2)
}

/// Standardized deviates and precisions of one outcome over its reporting studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeTransform {
    pub snd: Vec<f64>,
    pub precision: Vec<f64>,
    pub tau2_hat: f64,
    pub reporting_index: Vec<usize>,
}

impl OutcomeTransform {
    /// `P = (v + τ²)^(-1/2)`, `SND = y·P`.
    pub fn from_parts(
        effects: &[f64],
        variances: &[f64],
        tau2: f64,
        reporting_index: Vec<usize>,
    ) -> Self {
        let precision: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2).sqrt()).collect();
        let snd = effects.iter().zip(&precision).map(|(y, p)| y * p).collect();
        Self {
            snd,
            precision,
            tau2_hat: tau2,
            reporting_index,
        }
    }

    pub fn len(&self) -> usize {
        self.snd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snd.is_empty()
    }
}

pub fn transform_snd_precision(data: &MetaDataset, outcome: usize, tau2: f64) -> Result<OutcomeTransform> {
    if outcome >= data.n_outcomes() {
        return Err(MetaError::InvalidInput(format!("outcome index {outcome} out of range")));
    }
    if !(tau2.is_finite() && tau2 >= 0.0) {
        return Err(MetaError::InvalidInput(format!("tau2 {tau2} must be nonnegative")));
    }
    let index = data.reporting_index(outcome);
    if index.is_empty() {
        return Err(MetaError::OutcomeNeverReported(outcome));
    }
    let (effects, stderrs) = data.outcome_columns(outcome);
    let variances: Vec<f64> = stderrs.iter().map(|s| s * s).collect();
    Ok(OutcomeTransform::from_parts(&effects, &variances, tau2, index))
}

/// Log odds ratios and smoothed variances for a set of 2×2 tables.
///
/// With `p̄₁` the mean exposure proportion among cases and `p̄₀` among
/// controls, table `i` gets
/// `1/((a+c)p̄₁) + 1/((a+c)(1−p̄₁)) + 1/((b+d)p̄₀) + 1/((b+d)(1−p̄₀))`.
/// Tables with a zero cell get 0.5 added to every cell when `correct_zero_cells`
/// is set and are rejected otherwise.
pub fn smoothed_logor_variance(tables: &[TwoByTwo], correct_zero_cells: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if tables.is_empty() {
        return Err(MetaError::InvalidInput("no 2x2 tables".into()));
    }
    let mut used = Vec::with_capacity(tables.len());
    for (i, t) in tables.iter().enumerate() {
        t.check(i)?;
        if t.has_zero_cell() {
            if !correct_zero_cells {
                return Err(MetaError::ZeroCell { index: i });
            }
            used.push(t.corrected());
        } else {
            used.push(*t);
        }
    }
    let n = used.len() as f64;
    let p1 = used.iter().map(|t| t.a / (t.a + t.c)).sum::<f64>() / n;
    let p0 = used.iter().map(|t| t.b / (t.b + t.d)).sum::<f64>() / n;
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(MetaError::DegeneratePooledProportion { which: "p1", value: p1 });
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(MetaError::DegeneratePooledProportion { which: "p0", value: p0 });
    }
    let logor = used.iter().map(TwoByTwo::log_odds_ratio).collect();
    let var = used
        .iter()
        .map(|t| {
            let cases = t.a + t.c;
            let controls = t.b + t.d;
            1.0 / (cases * p1) + 1.0 / (cases * (1.0 - p1)) + 1.0 / (controls * p0) + 1.0 / (controls * (1.0 - p0))
        })
        .collect();
    Ok((logor, var))
}

/// Effects and within-study variances of one outcome over its reporting studies.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeColumns {
    pub reporting_index: Vec<usize>,
    pub effects: Vec<f64>,
    pub variances: Vec<f64>,
    /// Variances come from the smoothed log-odds-ratio formula.
    pub smoothed: bool,
}

impl OutcomeColumns {
    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn dl_fit(&self) -> Result<DlFit> {
        dl_fit_variances(&self.effects, &self.variances)
    }

    pub fn transform(&self, tau2: f64) -> OutcomeTransform {
        OutcomeTransform::from_parts(&self.effects, &self.variances, tau2, self.reporting_index.clone())
    }
}

/// Gather one outcome's columns. With `smooth`, every reporting study must
/// carry 2×2 counts; effects become log odds ratios and variances the
/// smoothed variances.
pub fn outcome_columns(
    data: &MetaDataset,
    outcome: usize,
    smooth: bool,
    correct_zero_cells: bool,
) -> Result<OutcomeColumns> {
    let reporting_index = data.reporting_index(outcome);
    if reporting_index.is_empty() {
        return Err(MetaError::OutcomeNeverReported(outcome));
    }
    if smooth {
        let tables = reporting_index
            .iter()
            .map(|&i| {
                data.studies[i].counts_for(outcome).copied().ok_or_else(|| {
                    MetaError::InvalidInput(format!(
                        "study {} has no 2x2 counts for a smoothed binary outcome",
                        data.studies[i].study_id
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (effects, variances) = smoothed_logor_variance(&tables, correct_zero_cells)?;
        return Ok(OutcomeColumns {
            reporting_index,
            effects,
            variances,
            smoothed: true,
        });
    }
    let (effects, stderrs) = data.outcome_columns(outcome);
    Ok(OutcomeColumns {
        reporting_index,
        effects,
        variances: stderrs.iter().map(|s| s * s).collect(),
        smoothed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OutcomeMeasurement, StudyRecord};
    use proptest::prelude::*;

    #[test]
    fn dl_zero_dispersion() {
        assert_eq!(dl_tau2(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn dl_hand_value() {
        // Q = 2, c = 2 - 2/2 = 1, tau2 = (2 - 1)/1
        let fit = dl_fit_variances(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!((fit.q - 2.0).abs() < 1e-15);
        assert!((fit.c - 1.0).abs() < 1e-15);
        assert!((fit.tau2 - 1.0).abs() < 1e-15);
        assert!(!fit.truncated);
    }

    #[test]
    fn dl_needs_two_studies() {
        assert!(matches!(dl_tau2(&[1.0], &[1.0]), Err(MetaError::InsufficientStudies(1))));
    }

    proptest! {
        #[test]
        fn dl_scales_quadratically(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.05f64..3.0), 2..30),
            c in 0.1f64..10.0,
        ) {
            let (y, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = dl_tau2(&y, &s).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ss: Vec<f64> = s.iter().map(|v| v * c).collect();
            let scaled = dl_tau2(&ys, &ss).unwrap();
            prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }

        #[test]
        fn dl_permutation_invariant(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.05f64..3.0), 2..30),
            rot in 0usize..30,
        ) {
            let (y, s): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let k = rot % y.len();
            let mut yr = y.clone();
            let mut sr = s.clone();
            yr.rotate_left(k);
            sr.rotate_left(k);
            yr.reverse();
            sr.reverse();
            let a = dl_tau2(&y, &s).unwrap();
            let b = dl_tau2(&yr, &sr).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn transform_scale_and_reconstruction(
            y in -5.0f64..5.0, s in 0.05f64..3.0, tau2 in 0.0f64..4.0, c in 0.1f64..10.0,
        ) {
            let t = OutcomeTransform::from_parts(&[y], &[s * s], tau2, vec![0]);
            prop_assert!((t.snd[0] / t.precision[0] - y).abs() <= 1e-12 * (1.0 + y.abs()));
            let u = OutcomeTransform::from_parts(&[c * y], &[c * c * s * s], c * c * tau2, vec![0]);
            prop_assert!((u.snd[0] - t.snd[0]).abs() <= 1e-12 * (1.0 + t.snd[0].abs()));
            prop_assert!((u.precision[0] - t.precision[0] / c).abs() <= 1e-12 * t.precision[0] / c);
        }
    }

    #[test]
    fn transform_hand_value() {
        let data = MetaDataset::new(
            vec![StudyRecord::new("a", vec![Some(OutcomeMeasurement::new(3.0, 4.0).unwrap())])],
            vec!["y".into()],
        );
        let t = transform_snd_precision(&data, 0, 9.0).unwrap();
        assert!((t.precision[0] - 0.2).abs() < 1e-15);
        assert!((t.snd[0] - 0.6).abs() < 1e-15);
        let fe = transform_snd_precision(&data, 0, 0.0).unwrap();
        assert!((fe.snd[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn transform_skips_unreported() {
        let m = |y| Some(OutcomeMeasurement::new(y, 1.0).unwrap());
        let data = MetaDataset::new(
            vec![
                StudyRecord::new("a", vec![m(1.0), None]),
                StudyRecord::new("b", vec![m(2.0), m(3.0)]),
            ],
            MetaDataset::default_labels(2),
        );
        let t = transform_snd_precision(&data, 1, 0.0).unwrap();
        assert_eq!(t.reporting_index, vec![1]);
        assert_eq!(t.snd, vec![3.0]);

        let empty = MetaDataset::new(
            vec![StudyRecord::new("a", vec![m(1.0), None])],
            MetaDataset::default_labels(2),
        );
        assert!(matches!(
            transform_snd_precision(&empty, 1, 0.0),
            Err(MetaError::OutcomeNeverReported(1))
        ));
    }

    #[test]
    fn smoothed_variance_hand_value() {
        let t = TwoByTwo::new(10.0, 90.0, 20.0, 80.0);
        let (lor, var) = smoothed_logor_variance(&[t], false).unwrap();
        assert!((lor[0] - (800.0f64 / 1800.0).ln()).abs() < 1e-15);
        assert!((lor[0] + 0.8109302162163288).abs() < 1e-12);
        let expected = 0.1 + 0.05 + 1.0 / 90.0 + 0.0125;
        assert!((var[0] - expected).abs() < 1e-14);
        assert!((var[0] - 0.17361).abs() < 1e-5);

        let (_, var2) = smoothed_logor_variance(&[t, t], false).unwrap();
        assert_eq!(var2[0], var2[1]);
        assert!((var2[0] - var[0]).abs() < 1e-15);
    }

    #[test]
    fn smoothed_variance_zero_cells() {
        let z = TwoByTwo::new(0.0, 10.0, 5.0, 10.0);
        let ok = TwoByTwo::new(3.0, 10.0, 5.0, 10.0);
        assert!(matches!(
            smoothed_logor_variance(&[ok, z], false),
            Err(MetaError::ZeroCell { index: 1 })
        ));
        let (lor, var) = smoothed_logor_variance(&[ok, z], true).unwrap();
        assert!(lor.iter().all(|v| v.is_finite()));
        assert!(var.iter().all(|v| *v > 0.0));
        // no exposed cases anywhere: p1 = 0
        let deg = TwoByTwo::new(0.0, 10.0, 5.0, 10.0);
        assert!(matches!(
            smoothed_logor_variance(&[deg, deg], false),
            Err(MetaError::ZeroCell { .. })
        ));
    }

    proptest! {
        #[test]
        fn smoothed_variance_positive_and_permutation_invariant(
            cells in prop::collection::vec((1u32..200, 1u32..200, 1u32..200, 1u32..200), 1..15),
        ) {
            let tables: Vec<TwoByTwo> = cells
                .iter()
                .map(|&(a, b, c, d)| TwoByTwo::new(a as f64, b as f64, c as f64, d as f64))
                .collect();
            let (_, var) = smoothed_logor_variance(&tables, false).unwrap();
            prop_assert!(var.iter().all(|v| *v > 0.0));
            let mut rev = tables.clone();
            rev.reverse();
            let (_, var_rev) = smoothed_logor_variance(&rev, false).unwrap();
            for (i, v) in var.iter().enumerate() {
                let w = var_rev[tables.len() - 1 - i];
                prop_assert!((v - w).abs() <= 1e-12 * v);
            }
        }
    }
}
