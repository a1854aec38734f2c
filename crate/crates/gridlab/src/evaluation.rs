//! Scoring how well a robustness measure predicts collapse behaviour.
//!
//! Each (network, measure) pair yields a univariate regression problem:
//! predict the mean collapse round of a limit profile from the measure's
//! value. The regression engine is the penalized cubic B-spline of
//! [`crate::spline`] — a deliberately simple stand-in for a single-predictor
//! generalized additive model, and every report says so. Skill is scored by
//! R² and SMAPE under repeated k-fold cross-validation, plus Pearson
//! correlation for time-series comparisons.

use crate::seeds::{derive_seed, permutation};
use crate::spline::{fit_spline, SplineHyperparameters, SplineModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// The declaration embedded in every report of what the regression engine is.
pub const REGRESSION_DESCRIPTION: &str =
    "univariate penalized cubic B-spline, smoothing by generalized cross-validation \
     (stand-in for a one-predictor generalized additive model)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series lengths differ ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least {need} points, got {n}")]
    TooFewPoints { n: usize, need: usize },
    #[error("R² undefined: all truth values equal")]
    ZeroTotalVariance,
    #[error("Pearson correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("dataset {network}/{measure} invalid: {reason}")]
    BadDataset {
        network: String,
        measure: String,
        reason: String,
    },
    #[error("cross-validation needs at least {need} points for {folds} folds, got {n}")]
    TooFewForFolds { n: usize, folds: u32, need: usize },
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Coefficient of determination R² = 1 − SS_res/SS_tot.
pub fn r_squared(truth: &[f64], predictions: &[f64]) -> Result<f64, EvalError> {
    if truth.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            a: truth.len(),
            b: predictions.len(),
        });
    }
    if truth.len() < 2 {
        return Err(EvalError::TooFewPoints {
            n: truth.len(),
            need: 2,
        });
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroTotalVariance);
    }
    let ss_res: f64 = truth
        .iter()
        .zip(predictions)
        .map(|(t, p)| (t - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// SMAPE with the count of skipped 0/0 terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smape {
    /// Percentage in [0, 200].
    pub value: f64,
    /// Terms where truth and prediction were both exactly zero; the formula
    /// is undefined there, so they contribute 0 and are flagged here.
    pub zero_zero_terms: usize,
}

/// Symmetric mean absolute percentage error:
/// (100/n)·Σ |p − r| / ((|r| + |p|)/2), bounded by [0, 200].
pub fn smape(truth: &[f64], predictions: &[f64]) -> Result<Smape, EvalError> {
    if truth.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            a: truth.len(),
            b: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::TooFewPoints { n: 0, need: 1 });
    }
    let mut total = 0.0;
    let mut zero_zero = 0usize;
    for (&r, &p) in truth.iter().zip(predictions) {
        let denom = (r.abs() + p.abs()) / 2.0;
        if denom == 0.0 {
            zero_zero += 1;
        } else {
            total += (p - r).abs() / denom;
        }
    }
    Ok(Smape {
        value: 100.0 * total / truth.len() as f64,
        zero_zero_terms: zero_zero,
    })
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            a: x.len(),
            b: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(EvalError::TooFewPoints {
            n: x.len(),
            need: 3,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// A (measure value, mean collapse round) regression problem for one network
/// and one measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub network: String,
    pub measure: String,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl RegressionDataset {
    /// Validated constructor: x finite, y finite and ≥ 1 (a collapse takes at
    /// least one round).
    pub fn new(
        network: impl Into<String>,
        measure: impl Into<String>,
        pairs: &[(f64, f64)],
    ) -> Result<Self, EvalError> {
        let network = network.into();
        let measure = measure.into();
        let bad = |reason: String| EvalError::BadDataset {
            network: network.clone(),
            measure: measure.clone(),
            reason,
        };
        for &(x, y) in pairs {
            if !x.is_finite() {
                return Err(bad(format!("non-finite predictor {x}")));
            }
            if !y.is_finite() || y < 1.0 {
                return Err(bad(format!("response {y} outside [1, ∞)")));
            }
        }
        Ok(RegressionDataset {
            network,
            measure,
            x: pairs.iter().map(|p| p.0).collect(),
            y: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }
}

/// Cross-validation shape: `repeats` independent shuffles, each split into
/// `folds` held-out folds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CvConfig {
    pub repeats: u32,
    pub folds: u32,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            repeats: 10,
            folds: 10,
            seed: 0,
        }
    }
}

/// Score of one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub repeat: u32,
    pub fold: u32,
    /// `None` when the held-out responses were all identical (R² undefined);
    /// such folds are excluded from the mean and counted in
    /// [`MeasureEvaluation::degenerate_folds`].
    pub r_squared: Option<f64>,
    pub smape: f64,
    /// Smoothing selected on this fold's training data.
    pub lambda: f64,
    pub edf: f64,
}

/// Cross-validated skill of one measure on one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureEvaluation {
    pub network: String,
    pub measure: String,
    pub fold_scores: Vec<FoldScore>,
    pub mean_r_squared: f64,
    pub mean_smape: f64,
    /// Folds whose held-out responses had zero variance.
    pub degenerate_folds: usize,
    /// Hyperparameters of the full-data fit backing plot output.
    pub full_fit: SplineHyperparameters,
}

/// The complete evaluation artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// What the regression engine is (see [`REGRESSION_DESCRIPTION`]).
    pub regression: String,
    pub repeats: u32,
    pub folds: u32,
    pub entries: Vec<MeasureEvaluation>,
}

/// Deterministic fold membership: a shuffle of `0..n` chopped into `folds`
/// contiguous chunks whose sizes differ by at most one.
pub fn fold_assignments(n: usize, folds: u32, seed: u64) -> Vec<Vec<usize>> {
    let order = permutation(n, seed);
    let base = n / folds as usize;
    let extra = n % folds as usize;
    let mut out = Vec::with_capacity(folds as usize);
    let mut start = 0;
    for f in 0..folds as usize {
        let size = base + usize::from(f < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Repeated k-fold cross-validation of one dataset.
///
/// Every repeat reshuffles deterministically from the seed; every point sits
/// in exactly one held-out fold per repeat; fold models never see their
/// held-out points. Repeats run in parallel and are reduced in repeat order.
pub fn cross_validate(
    dataset: &RegressionDataset,
    config: &CvConfig,
) -> Result<MeasureEvaluation, EvalError> {
    let n = dataset.len();
    if n < 20 {
        return Err(EvalError::TooFewPoints { n, need: 20 });
    }
    let folds = config.folds.max(2);
    // Every training split must satisfy the spline's 10-point floor.
    let smallest_train = n - (n / folds as usize + 1);
    if n < folds as usize || smallest_train < 10 {
        return Err(EvalError::TooFewForFolds {
            n,
            folds,
            need: folds as usize + 10,
        });
    }

    let repeat_scores: Vec<Result<Vec<FoldScore>, EvalError>> = (0..config.repeats)
        .into_par_iter()
        .map(|repeat| {
            let assignment =
                fold_assignments(n, folds, derive_seed(config.seed, repeat as u64));
            let mut scores = Vec::with_capacity(folds as usize);
            for (fold_idx, held) in assignment.iter().enumerate() {
                let mut in_fold = vec![false; n];
                for &i in held {
                    in_fold[i] = true;
                }
                let (mut tx, mut ty) = (Vec::new(), Vec::new());
                let (mut hx, mut hy) = (Vec::new(), Vec::new());
                for i in 0..n {
                    if in_fold[i] {
                        hx.push(dataset.x[i]);
                        hy.push(dataset.y[i]);
                    } else {
                        tx.push(dataset.x[i]);
                        ty.push(dataset.y[i]);
                    }
                }
                let model = fit_spline(&tx, &ty)?;
                let predictions = model.predict_many(&hx);
                let r2 = match r_squared(&hy, &predictions) {
                    Ok(v) => Some(v),
                    Err(EvalError::ZeroTotalVariance) => None,
                    Err(e) => return Err(e),
                };
                let sm = smape(&hy, &predictions)?;
                scores.push(FoldScore {
                    repeat,
                    fold: fold_idx as u32,
                    r_squared: r2,
                    smape: sm.value,
                    lambda: model.hyperparameters().lambda,
                    edf: model.hyperparameters().edf,
                });
            }
            Ok(scores)
        })
        .collect();

    let mut fold_scores = Vec::with_capacity((config.repeats * folds) as usize);
    for r in repeat_scores {
        fold_scores.extend(r?);
    }
    let defined: Vec<f64> = fold_scores.iter().filter_map(|s| s.r_squared).collect();
    let degenerate_folds = fold_scores.len() - defined.len();
    let mean_r_squared = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let mean_smape =
        fold_scores.iter().map(|s| s.smape).sum::<f64>() / fold_scores.len() as f64;
    let full = fit_spline(dataset.xs(), dataset.ys())?;
    Ok(MeasureEvaluation {
        network: dataset.network.clone(),
        measure: dataset.measure.clone(),
        fold_scores,
        mean_r_squared,
        mean_smape,
        degenerate_folds,
        full_fit: full.hyperparameters().clone(),
    })
}

/// Cross-validate a batch of datasets in parallel (order preserved).
pub fn evaluate_datasets(
    datasets: &[RegressionDataset],
    config: &CvConfig,
) -> Result<EvaluationReport, EvalError> {
    let entries: Vec<Result<MeasureEvaluation, EvalError>> = datasets
        .par_iter()
        .map(|ds| cross_validate(ds, config))
        .collect();
    Ok(EvaluationReport {
        regression: REGRESSION_DESCRIPTION.to_string(),
        repeats: config.repeats,
        folds: config.folds.max(2),
        entries: entries.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Fit the full dataset once for plotting.
pub fn fit_full(dataset: &RegressionDataset) -> Result<SplineModel, EvalError> {
    Ok(fit_spline(dataset.xs(), dataset.ys())?)
}

/// Write the report as pretty JSON (trailing newline, stable field order).
pub fn write_report_json(report: &EvaluationReport, path: &Path) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Write one CSV row per fold score, prefixed by a `#` line declaring the
/// regression engine.
pub fn write_report_csv(report: &EvaluationReport, path: &Path) -> Result<(), EvalError> {
    let mut out = Vec::new();
    writeln!(out, "# regression: {}", report.regression)?;
    writeln!(out, "network,measure,repeat,fold,r_squared,smape,lambda,edf")?;
    for entry in &report.entries {
        for s in &entry.fold_scores {
            let r2 = s
                .r_squared
                .map_or(String::new(), |v| format!("{v}"));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                entry.network, entry.measure, s.repeat, s.fold, r2, s.smape, s.lambda, s.edf
            )?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plot-ready CSV of (x, y, prediction) for one dataset under its full-data
/// model, sorted by x.
pub fn write_plot_csv(
    dataset: &RegressionDataset,
    model: &SplineModel,
    path: &Path,
) -> Result<(), EvalError> {
    let mut rows: Vec<(f64, f64)> = dataset
        .xs()
        .iter()
        .cloned()
        .zip(dataset.ys().iter().cloned())
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out = Vec::new();
    writeln!(out, "# regression: {REGRESSION_DESCRIPTION}")?;
    writeln!(out, "x,y,prediction")?;
    for (x, y) in rows {
        writeln!(out, "{},{},{}", x, y, model.predict(x))?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::seeds::SplitMix64;

    #[test]
    fn test_r_squared_hand_fixtures() {
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        // Predicting the mean scores exactly zero.
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(),
            0.0
        );
        // SS_res 4, SS_tot 2 → 1 − 2 = −1.
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap(),
            -1.0
        );
        assert!(matches!(
            r_squared(&[2.0, 2.0], &[1.0, 3.0]),
            Err(EvalError::ZeroTotalVariance)
        ));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn test_smape_hand_fixtures() {
        assert_relative_eq!(smape(&[3.0, 4.0], &[3.0, 4.0]).unwrap().value, 0.0);
        assert_relative_eq!(smape(&[1.0], &[3.0]).unwrap().value, 100.0);
        assert_relative_eq!(smape(&[1.0], &[0.0]).unwrap().value, 200.0);
    }

    #[test]
    fn test_smape_zero_zero_terms_flagged() {
        let s = smape(&[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(s.zero_zero_terms, 1);
        assert_relative_eq!(s.value, 0.0);
    }

    #[test]
    fn test_smape_symmetric_and_bounded() {
        let mut rng = SplitMix64::new(5150);
        for _ in 0..1000 {
            let n = 1 + rng.next_below(8) as usize;
            let draw = |rng: &mut SplitMix64| {
                (0..n)
                    .map(|_| (rng.next_below(4001) as f64 - 2000.0) / 37.0)
                    .collect::<Vec<f64>>()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let ab = smape(&a, &b).unwrap().value;
            let ba = smape(&b, &a).unwrap().value;
            assert_relative_eq!(ab, ba, epsilon = 1e-12);
            assert!((0.0..=200.0 + 1e-12).contains(&ab), "smape {ab} out of range");
        }
    }

    #[test]
    fn test_pearson_hand_fixtures() {
        let x = [1.0, 2.0, 3.0];
        assert_relative_eq!(pearson(&x, &[3.0, 5.0, 7.0]).unwrap(), 1.0);
        assert_relative_eq!(pearson(&x, &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        assert_relative_eq!(pearson(&x, &[1.0, 3.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(
            pearson(&x, &[4.0, 4.0, 4.0]),
            Err(EvalError::ZeroVariance)
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn test_pearson_affine_invariance() {
        let mut rng = SplitMix64::new(808);
        let x: Vec<f64> = (0..50).map(|_| rng.next_below(1000) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| v * 0.5 + (rng.next_below(100) as f64))
            .collect();
        let base = pearson(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|&v| 3.0 * v - 17.0).collect();
        let y2: Vec<f64> = y.iter().map(|&v| 0.01 * v + 400.0).collect();
        assert_relative_eq!(pearson(&x2, &y2).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn test_dataset_validation() {
        assert!(RegressionDataset::new("n", "m", &[(0.5, 1.0), (0.7, 3.0)]).is_ok());
        assert!(RegressionDataset::new("n", "m", &[(f64::NAN, 2.0)]).is_err());
        assert!(RegressionDataset::new("n", "m", &[(0.5, 0.5)]).is_err());
        assert!(RegressionDataset::new("n", "m", &[(0.5, f64::INFINITY)]).is_err());
    }

    fn synthetic_dataset(n: usize, noise: f64, seed: u64) -> RegressionDataset {
        let mut rng = SplitMix64::new(seed);
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                let e = (rng.next_below(2001) as f64 - 1000.0) / 1000.0 * noise;
                (x, 3.0 + 2.0 * x + (3.5 * x).sin() + e)
            })
            .collect();
        RegressionDataset::new("net", "meas", &pairs).unwrap()
    }

    #[test]
    fn test_fold_assignments_partition_exactly() {
        for (n, folds) in [(100usize, 10u32), (23, 5), (20, 10), (97, 10)] {
            let assignment = fold_assignments(n, folds, 42);
            assert_eq!(assignment.len(), folds as usize);
            let mut seen = vec![false; n];
            for fold in &assignment {
                for &i in fold {
                    assert!(!seen[i], "index {i} held out twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "some index never held out");
            let sizes: Vec<usize> = assignment.iter().map(|f| f.len()).collect();
            let (lo, hi) = (
                *sizes.iter().min().expect("folds nonempty"),
                *sizes.iter().max().expect("folds nonempty"),
            );
            assert!(hi - lo <= 1, "unbalanced folds {sizes:?}");
        }
    }

    #[test]
    fn test_cross_validate_counts_and_determinism() {
        let ds = synthetic_dataset(100, 0.05, 9);
        let cfg = CvConfig {
            repeats: 10,
            folds: 10,
            seed: 77,
        };
        let a = cross_validate(&ds, &cfg).unwrap();
        assert_eq!(a.fold_scores.len(), 100);
        for repeat in 0..10 {
            let held: usize = a
                .fold_scores
                .iter()
                .filter(|s| s.repeat == repeat)
                .count();
            assert_eq!(held, 10);
        }
        let b = cross_validate(&ds, &cfg).unwrap();
        assert_eq!(a.fold_scores, b.fold_scores);
        assert_relative_eq!(a.mean_r_squared, b.mean_r_squared);
    }

    #[test]
    fn test_cross_validate_recovers_clean_signal() {
        let ds = synthetic_dataset(200, 0.05, 31);
        let report = cross_validate(&ds, &CvConfig::default()).unwrap();
        assert!(
            report.mean_r_squared > 0.95,
            "mean R² {} too low for a clean signal",
            report.mean_r_squared
        );
        assert_eq!(report.degenerate_folds, 0);
    }

    #[test]
    fn test_cross_validate_rejects_small_datasets() {
        let ds = synthetic_dataset(19, 0.0, 1);
        assert!(matches!(
            cross_validate(&ds, &CvConfig::default()),
            Err(EvalError::TooFewPoints { n: 19, need: 20 })
        ));
    }

    #[test]
    fn test_evaluate_datasets_reports_engine() {
        let datasets = vec![synthetic_dataset(40, 0.1, 3), synthetic_dataset(40, 0.1, 4)];
        let report = evaluate_datasets(
            &datasets,
            &CvConfig {
                repeats: 2,
                folds: 4,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(report.regression, REGRESSION_DESCRIPTION);
        assert_eq!(report.entries.len(), 2);
        assert!(report
            .entries
            .iter()
            .all(|e| e.fold_scores.len() == 8));
    }

    #[test]
    fn test_report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_dataset(40, 0.1, 3);
        let cfg = CvConfig {
            repeats: 2,
            folds: 4,
            seed: 5,
        };
        let report = evaluate_datasets(&[ds.clone()], &cfg).unwrap();
        let json_path = dir.path().join("report.json");
        let csv_path = dir.path().join("report.csv");
        let plot_path = dir.path().join("plot.csv");
        write_report_json(&report, &json_path).unwrap();
        write_report_csv(&report, &csv_path).unwrap();
        write_plot_csv(&ds, &fit_full(&ds).unwrap(), &plot_path).unwrap();

        let parsed: EvaluationReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.entries[0].fold_scores, report.entries[0].fold_scores);

        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv_text.starts_with("# regression:"));
        assert_eq!(csv_text.lines().count(), 2 + 8); // banner + header + folds

        let plot_text = std::fs::read_to_string(&plot_path).unwrap();
        assert_eq!(plot_text.lines().count(), 2 + 40);
        let xs: Vec<f64> = plot_text
            .lines()
            .skip(2)
            .map(|l| l.split(',').next().expect("row has x").parse().unwrap())
            .collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]), "plot rows not sorted");
    }
}
