//! Out-of-sample forecast metrics, their peak-only restriction, and the
//! multi-model comparison table.
//!
//! The four headline metrics are mse, rmse (= sqrt(mse) exactly), mae,
//! and mape as a fraction. When any target is numerically zero the mape
//! is reported absent rather than failing the whole report.

use thiserror::Error;

/// Targets smaller than this in magnitude make the relative error
/// meaningless, so mape is suppressed.
pub const ZERO_TARGET_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and target lengths differ: {preds} vs {targets}")]
    DimensionMismatch { preds: usize, targets: usize },
    #[error("metrics over an empty set are undefined")]
    EmptySet,
    #[error("no target exceeds the threshold {threshold}")]
    NoExceedances { threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Mean |error| / |target|, absent when any target is numerically zero.
    pub mape: Option<f64>,
    pub n: usize,
}

/// Mean squared/absolute/relative errors of aligned predictions.
pub fn compute_metrics(preds: &[f64], targets: &[f64]) -> Result<MetricReport, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::DimensionMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let n = preds.len() as f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut rel = Some(0.0);
    for (p, t) in preds.iter().zip(targets) {
        let e = p - t;
        sq += e * e;
        abs += e.abs();
        rel = match rel {
            Some(acc) if t.abs() >= ZERO_TARGET_EPS => Some(acc + e.abs() / t.abs()),
            _ => None,
        };
    }
    let mse = sq / n;
    Ok(MetricReport {
        mse,
        rmse: mse.sqrt(),
        mae: abs / n,
        mape: rel.map(|acc| acc / n),
        n: preds.len(),
    })
}

/// [`compute_metrics`] restricted to indices whose target strictly
/// exceeds `u`.
pub fn peak_metrics(preds: &[f64], targets: &[f64], u: f64) -> Result<MetricReport, EvalError> {
    if preds.len() != targets.len() {
        return Err(EvalError::DimensionMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    let mut peak_preds = Vec::new();
    let mut peak_targets = Vec::new();
    for (p, t) in preds.iter().zip(targets) {
        if *t > u {
            peak_preds.push(*p);
            peak_targets.push(*t);
        }
    }
    if peak_targets.is_empty() {
        return Err(EvalError::NoExceedances { threshold: u });
    }
    compute_metrics(&peak_preds, &peak_targets)
}

/// One comparison line: overall metrics plus the peak-only restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub overall: MetricReport,
    pub peaks: MetricReport,
}

/// Evaluate every named prediction set against the same targets, overall
/// and over the exceedances of `u`. Rows keep the caller's order.
pub fn compare_models(
    models: &[(String, Vec<f64>)],
    targets: &[f64],
    u: f64,
) -> Result<Vec<ComparisonRow>, EvalError> {
    models
        .iter()
        .map(|(name, preds)| {
            Ok(ComparisonRow {
                model: name.clone(),
                overall: compute_metrics(preds, targets)?,
                peaks: peak_metrics(preds, targets, u)?,
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Comparison table as CSV with full-precision values; an absent mape is
/// an empty cell.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("model,mse,rmse,mae,mape,peak_mse,peak_rmse,peak_mae,peak_mape,n,n_peaks\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.model,
            row.overall.mse,
            row.overall.rmse,
            row.overall.mae,
            cell(row.overall.mape),
            row.peaks.mse,
            row.peaks.rmse,
            row.peaks.mae,
            cell(row.peaks.mape),
            row.overall.n,
            row.peaks.n,
        ));
    }
    out
}

/// Comparison table formatted for terminals: fixed-point columns aligned
/// under their headers.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let name_width = rows
        .iter()
        .map(|r| r.model.len())
        .chain(std::iter::once("model".len()))
        .max()
        .unwrap_or(5);
    let mut out = format!(
        "{:<name_width$}  {:>12} {:>10} {:>10} {:>8} {:>12} {:>10} {:>10} {:>9} {:>6} {:>7}\n",
        "model",
        "mse",
        "rmse",
        "mae",
        "mape",
        "peak_mse",
        "peak_rmse",
        "peak_mae",
        "peak_mape",
        "n",
        "n_peaks",
    );
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    };
    for row in rows {
        out.push_str(&format!(
            "{:<name_width$}  {:>12.2} {:>10.2} {:>10.2} {:>8} {:>12.2} {:>10.2} {:>10.2} {:>9} {:>6} {:>7}\n",
            row.model,
            row.overall.mse,
            row.overall.rmse,
            row.overall.mae,
            fmt(row.overall.mape),
            row.peaks.mse,
            row.peaks.rmse,
            row.peaks.mae,
            fmt(row.peaks.mape),
            row.overall.n,
            row.peaks.n,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_point_example() {
        let m = compute_metrics(&[90.0], &[100.0]).unwrap();
        assert_eq!(m.mse, 100.0);
        assert_eq!(m.rmse, 10.0);
        assert_eq!(m.mae, 10.0);
        assert_eq!(m.mape, Some(0.1));
        assert_eq!(m.n, 1);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let t = [3.0, -4.0, 5.5];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae, m.mape), (0.0, 0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn zero_target_suppresses_only_the_relative_error() {
        let m = compute_metrics(&[1.0, 2.0], &[0.0, 4.0]).unwrap();
        assert_eq!(m.mape, None);
        assert_eq!(m.mse, (1.0 + 4.0) / 2.0);
        assert_eq!(m.mae, 1.5);
    }

    #[test]
    fn rmse_is_the_exact_square_root_of_mse() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..20 {
            let preds: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
            let targets: Vec<f64> = (0..50).map(|_| rng.random_range(1.0..5.0)).collect();
            let m = compute_metrics(&preds, &targets).unwrap();
            assert_eq!(m.rmse.to_bits(), m.mse.sqrt().to_bits());
            assert!((m.rmse * m.rmse - m.mse).abs() < 1e-12);
            assert!(m.mae <= m.rmse + 1e-12, "mae {} rmse {}", m.mae, m.rmse);
        }
    }

    #[test]
    fn scaling_both_series_scales_the_metrics_predictably() {
        let mut rng = StdRng::seed_from_u64(13);
        let preds: Vec<f64> = (0..40).map(|_| rng.random_range(10.0..20.0)).collect();
        let targets: Vec<f64> = (0..40).map(|_| rng.random_range(10.0..20.0)).collect();
        let c = 3.7;
        let scaled_p: Vec<f64> = preds.iter().map(|v| v * c).collect();
        let scaled_t: Vec<f64> = targets.iter().map(|v| v * c).collect();
        let base = compute_metrics(&preds, &targets).unwrap();
        let scaled = compute_metrics(&scaled_p, &scaled_t).unwrap();
        assert!((scaled.mse - base.mse * c * c).abs() / scaled.mse < 1e-12);
        assert!((scaled.rmse - base.rmse * c).abs() / scaled.rmse < 1e-12);
        assert!((scaled.mae - base.mae * c).abs() / scaled.mae < 1e-12);
        let (a, b) = (base.mape.unwrap(), scaled.mape.unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_pair_order() {
        let preds = [1.0, 2.0, 3.0, 4.0];
        let targets = [1.5, 1.0, 3.5, 2.0];
        let a = compute_metrics(&preds, &targets).unwrap();
        let rp: Vec<f64> = preds.iter().rev().copied().collect();
        let rt: Vec<f64> = targets.iter().rev().copied().collect();
        let b = compute_metrics(&rp, &rt).unwrap();
        assert!((a.mse - b.mse).abs() < 1e-12);
        assert!((a.mae - b.mae).abs() < 1e-12);
        assert!((a.mape.unwrap() - b.mape.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_are_reported() {
        assert_eq!(
            compute_metrics(&[1.0], &[1.0, 2.0]).unwrap_err(),
            EvalError::DimensionMismatch {
                preds: 1,
                targets: 2
            }
        );
        assert_eq!(compute_metrics(&[], &[]).unwrap_err(), EvalError::EmptySet);
    }

    #[test]
    fn peak_restriction_selects_strict_exceedances() {
        let preds = [10.0, 20.0, 30.0];
        let targets = [10.0, 25.0, 28.0];
        // u below the minimum keeps every pair: identical to the overall.
        let all = peak_metrics(&preds, &targets, 0.0).unwrap();
        assert_eq!(all, compute_metrics(&preds, &targets).unwrap());
        // u = 25 keeps only the strict exceedance at index 2.
        let one = peak_metrics(&preds, &targets, 25.0).unwrap();
        assert_eq!(one.n, 1);
        assert_eq!(one.mae, 2.0);
        assert_eq!(
            peak_metrics(&preds, &targets, 100.0).unwrap_err(),
            EvalError::NoExceedances { threshold: 100.0 }
        );
    }

    #[test]
    fn comparing_a_model_with_itself_gives_identical_rows() {
        let targets = vec![10.0, 20.0, 35.0, 15.0];
        let preds = vec![11.0, 19.0, 33.0, 15.5];
        let models = vec![
            ("a".to_string(), preds.clone()),
            ("b".to_string(), preds.clone()),
        ];
        let rows = compare_models(&models, &targets, 18.0).unwrap();
        assert_eq!(rows[0].overall, rows[1].overall);
        assert_eq!(rows[0].peaks, rows[1].peaks);
        assert_eq!(rows[0].model, "a");
        assert_eq!(rows[1].model, "b");
    }

    #[test]
    fn exact_model_scores_zero_everywhere() {
        let targets = vec![10.0, 20.0, 35.0];
        let models = vec![
            ("exact".to_string(), targets.clone()),
            ("off".to_string(), vec![12.0, 18.0, 30.0]),
        ];
        let rows = compare_models(&models, &targets, 15.0).unwrap();
        assert_eq!(rows[0].overall.mse, 0.0);
        assert_eq!(rows[0].peaks.mae, 0.0);
        assert!(rows[1].overall.mse > 0.0);
        assert!(rows[0].overall.mse < rows[1].overall.mse);
        assert!(rows[0].peaks.mae < rows[1].peaks.mae);
    }

    #[test]
    fn csv_layout_is_stable_and_full_precision() {
        let targets = vec![2.0, 4.0];
        let models = vec![("m".to_string(), vec![1.0, 5.0])];
        let rows = compare_models(&models, &targets, 3.0).unwrap();
        let csv = comparison_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,mse,rmse,mae,mape,peak_mse,peak_rmse,peak_mae,peak_mape,n,n_peaks"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("m,1,1,1,"));
        assert!(row.ends_with(",2,1"));
        // mape = (0.5 + 0.25) / 2 = 0.375 exactly.
        assert!(row.contains(",0.375,"));
    }

    #[test]
    fn text_table_aligns_headers_and_rows() {
        let targets = vec![2.0, 4.0];
        let models = vec![("model-with-long-name".to_string(), vec![1.0, 5.0])];
        let rows = compare_models(&models, &targets, 3.0).unwrap();
        let table = comparison_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("model"));
        assert!(lines[1].starts_with("model-with-long-name"));
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
