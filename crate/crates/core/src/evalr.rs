//! Confusion matrices, precision/recall/F, effort reduction, threshold
//! sweeps and probability histograms over a labeled holdout set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Prediction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no truth label for study {0}")]
    MissingTruth(String),
    #[error("thresholds must be sorted ascending")]
    UnsortedThresholds,
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("bin width {0} outside (0, 1]")]
    InvalidBinWidth(f64),
}

/// Truth labels keyed by study id (1 include, 0 exclude).
pub type Truth = HashMap<String, u8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
    pub threshold: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }

    /// Studies the model marks Exclude.
    pub fn predicted_exclude(&self) -> usize {
        self.tn + self.r#fn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Share of studies a reviewer no longer has to screen: `(tn + fn) / total`.
    pub effort_reduction: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_at_threshold(preds: &[Prediction], truth: &Truth, threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    let mut cm = ConfusionMatrix { tp: 0, fp: 0, tn: 0, r#fn: 0, threshold };
    for p in preds {
        let y = *truth.get(&p.study_id).ok_or_else(|| EvalError::MissingTruth(p.study_id.clone()))?;
        match (p.probability >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.r#fn += 1,
        }
    }
    Ok(cm)
}

/// Zero denominators give 0 rather than an error.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.r#fn);
    let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Metrics { precision, recall, f_score, effort_reduction: ratio(cm.predicted_exclude(), cm.total()) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

pub fn threshold_sweep(preds: &[Prediction], truth: &Truth, thresholds: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
    if let Some(&t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(EvalError::ThresholdOutOfRange(t));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedThresholds);
    }
    thresholds
        .iter()
        .map(|&t| {
            let confusion = confusion_at_threshold(preds, truth, t)?;
            Ok(SweepRow { threshold: t, metrics: metrics_from_confusion(&confusion), confusion })
        })
        .collect()
}

/// CSV with `threshold,f_score,precision,recall,tn,tp,fn,fp,reduced_pct`,
/// four decimals, LF line endings. `reduced_pct` is a percentage.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,f_score,precision,recall,tn,tp,fn,fp,reduced_pct\n");
    for r in rows {
        let c = &r.confusion;
        out.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{},{},{},{},{:.4}\n",
            r.threshold,
            r.metrics.f_score,
            r.metrics.precision,
            r.metrics.recall,
            c.tn,
            c.tp,
            c.r#fn,
            c.fp,
            r.metrics.effort_reduction * 100.0
        ));
    }
    out
}

/// A reported sweep row whose counts do not add up to the evaluated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTableIssue {
    pub row: usize,
    pub threshold: f64,
    pub sum: usize,
    pub expected_total: usize,
}

/// Flags rows of an externally reported sweep table whose confusion counts
/// do not sum to `expected_total`.
pub fn check_sweep_table(rows: &[ConfusionMatrix], expected_total: usize) -> Vec<SweepTableIssue> {
    rows.iter()
        .enumerate()
        .filter(|(_, cm)| cm.total() != expected_total)
        .map(|(row, cm)| SweepTableIssue { row, threshold: cm.threshold, sum: cm.total(), expected_total })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub count: usize,
}

/// Bins `[i*w, (i+1)*w)` covering `[0, 1]`; the last bin also holds 1.0.
pub fn probability_histogram(preds: &[Prediction], bin_width: f64) -> Result<Vec<HistogramBin>, EvalError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(EvalError::InvalidBinWidth(bin_width));
    }
    let n_bins = ((1.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let starts: Vec<f64> = (0..n_bins).map(|i| i as f64 * bin_width).collect();
    let mut counts = vec![0usize; n_bins];
    for p in preds {
        let x = p.probability.clamp(0.0, 1.0);
        let mut i = ((x / bin_width).floor() as usize).min(n_bins - 1);
        // Settle against the reported bin edges so edge values land consistently.
        while i > 0 && x < starts[i] {
            i -= 1;
        }
        while i + 1 < n_bins && x >= starts[i + 1] {
            i += 1;
        }
        counts[i] += 1;
    }
    Ok(starts.into_iter().zip(counts).map(|(bin_start, count)| HistogramBin { bin_start, count }).collect())
}

pub fn histogram_to_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_start,count\n");
    for b in bins {
        out.push_str(&format!("{:.4},{}\n", b.bin_start, b.count));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(probs: &[f64]) -> (Vec<Prediction>, Truth) {
        let p = probs.iter().enumerate().map(|(i, &probability)| Prediction { study_id: format!("s{i}"), probability }).collect();
        (p, Truth::new())
    }

    fn labeled(probs: &[f64], labels: &[u8]) -> (Vec<Prediction>, Truth) {
        let (p, _) = preds(probs);
        let t = labels.iter().enumerate().map(|(i, &y)| (format!("s{i}"), y)).collect();
        (p, t)
    }

    fn cm(tn: usize, tp: usize, r#fn: usize, fp: usize) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, r#fn, threshold: 0.5 }
    }

    #[test]
    fn perfect_split() {
        let (p, t) = labeled(&[0.9, 0.1], &[1, 0]);
        let c = confusion_at_threshold(&p, &t, 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.r#fn), (1, 1, 0, 0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let (p, t) = labeled(&[0.5], &[0]);
        assert_eq!(confusion_at_threshold(&p, &t, 0.5).unwrap().fp, 1);
    }

    #[test]
    fn missing_truth_reported() {
        let (p, _) = preds(&[0.2]);
        assert_eq!(confusion_at_threshold(&p, &Truth::new(), 0.5).unwrap_err(), EvalError::MissingTruth("s0".into()));
    }

    #[test]
    fn first_table_row_metrics() {
        let m = metrics_from_confusion(&cm(430, 24, 14, 83));
        assert!((m.precision - 24.0 / 107.0).abs() < 1e-12);
        assert!((m.recall - 24.0 / 38.0).abs() < 1e-12);
        assert!((m.f_score - 48.0 / 145.0).abs() < 1e-12);
    }

    #[test]
    fn full_recall_row_effort() {
        let m = metrics_from_confusion(&cm(187, 38, 0, 326));
        assert_eq!(m.recall, 1.0);
        assert!((m.effort_reduction - 187.0 / 551.0).abs() < 1e-12);
        assert!((m.precision - 38.0 / 364.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_counts_give_zero_metrics() {
        let m = metrics_from_confusion(&cm(5, 0, 0, 0));
        assert_eq!((m.precision, m.recall, m.f_score, m.effort_reduction), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn zero_threshold_includes_everything() {
        let (p, t) = labeled(&[0.0, 0.3, 0.9], &[1, 0, 1]);
        let rows = threshold_sweep(&p, &t, &[0.0]).unwrap();
        assert_eq!(rows[0].metrics.recall, 1.0);
        assert_eq!(rows[0].metrics.effort_reduction, 0.0);
    }

    #[test]
    fn unsorted_or_out_of_range_thresholds_rejected() {
        let (p, t) = labeled(&[0.2], &[1]);
        assert_eq!(threshold_sweep(&p, &t, &[0.6, 0.5]).unwrap_err(), EvalError::UnsortedThresholds);
        assert_eq!(threshold_sweep(&p, &t, &[1.5]).unwrap_err(), EvalError::ThresholdOutOfRange(1.5));
    }

    #[test]
    fn sweep_csv_format() {
        let (p, t) = labeled(&[0.9, 0.1], &[1, 0]);
        let csv = sweep_to_csv(&threshold_sweep(&p, &t, &[0.5]).unwrap());
        assert_eq!(csv, "threshold,f_score,precision,recall,tn,tp,fn,fp,reduced_pct\n0.5000,1.0000,1.0000,1.0000,1,1,0,0,50.0000\n");
    }

    #[test]
    fn table_check_flags_only_inconsistent_rows() {
        let rows = [cm(187, 38, 0, 326), cm(283, 36, 2, 267)];
        let issues = check_sweep_table(&rows, 551);
        assert_eq!(issues.len(), 1);
        assert_eq!((issues[0].row, issues[0].sum), (1, 588));
    }

    #[test]
    fn histogram_examples() {
        let (p, _) = preds(&[0.05, 0.95]);
        let h = probability_histogram(&p, 0.1).unwrap();
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].count, 1);
        assert_eq!(h[9].count, 1);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 2);

        let h = probability_histogram(&[], 0.1).unwrap();
        assert!(h.iter().all(|b| b.count == 0));

        let (p, _) = preds(&[0.1, 0.1, 0.1]);
        let h = probability_histogram(&p, 0.5).unwrap();
        assert_eq!(h[0].count, 3);
    }

    #[test]
    fn histogram_edges() {
        let (p, _) = preds(&[0.0, 0.3, 1.0]);
        let h = probability_histogram(&p, 0.1).unwrap();
        assert_eq!(h[0].count, 1);
        assert_eq!(h[9].count, 1);
        let bin_of_03 = h.iter().position(|b| b.count == 1 && b.bin_start > 0.0 && b.bin_start < 0.9).unwrap();
        assert!(h[bin_of_03].bin_start <= 0.3 && 0.3 < h[bin_of_03].bin_start + 0.1 + 1e-12);
        assert!(probability_histogram(&p, 0.0).is_err());
        assert!(probability_histogram(&p, 1.5).is_err());
        assert_eq!(probability_histogram(&p, 0.3).unwrap().len(), 4);
    }

    proptest! {
        #[test]
        fn f_score_between_precision_and_recall(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, r#fn in 0usize..50) {
            let m = metrics_from_confusion(&ConfusionMatrix { tp, fp, tn, r#fn, threshold: 0.5 });
            if m.precision + m.recall > 0.0 {
                prop_assert!(m.f_score >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f_score <= m.precision.max(m.recall) + 1e-12);
            }
            for v in [m.precision, m.recall, m.f_score, m.effort_reduction] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn histogram_counts_every_prediction(probs in proptest::collection::vec(0.0f64..=1.0, 0..50), width in 0.01f64..=1.0) {
            let (p, _) = preds(&probs);
            let h = probability_histogram(&p, width).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), probs.len());
        }
    }
}
