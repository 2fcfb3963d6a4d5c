//! Confusion matrix, the six standard binary-classifier metrics, ROC curve
//! and AUC, plus the report/CSV/SVG export surfaces.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// TP/FP/FN/TN counts. `P = tp + fn`, `N = tn + fp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Count thresholded predictions against 0/1 labels. A sample is predicted
/// positive iff `score >= threshold`.
pub fn confusion<T: Scalar>(scores: &[T], labels: &[T], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    let t = T::from_f64(threshold);
    for (&s, &y) in scores.iter().zip(labels) {
        if y != T::zero() && y != T::one() {
            return Err(Error::BadLabel(y.as_f64()));
        }
        let predicted = s >= t;
        let actual = y == T::one();
        match (predicted, actual) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// The six headline metrics. Rates are fractions in `[0, 1]`; MCC is in
/// `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: f64,
    pub confusion: ConfusionMatrix,
}

/// Compute the report from a confusion matrix:
///
/// - accuracy    `(TP + TN) / (P + N)`
/// - sensitivity `TP / (TP + FN)`
/// - specificity `TN / (FP + TN)`
/// - precision   `TP / (TP + FP)`
/// - F1          `2 TP / (2 TP + FP + FN)`
/// - MCC         `(TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN))`
///
/// Zero-denominator conventions: every ratio with an empty denominator is 0,
/// including MCC when any factor under the square root vanishes.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };

    let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, fp + tn);
    let precision = ratio(tp, tp + fp);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, mcc_den);

    Ok(MetricsReport {
        accuracy,
        sensitivity,
        specificity,
        precision,
        f1,
        mcc,
        confusion: *cm,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve: thresholds swept from `+inf` down through every distinct
/// score (ties grouped), anchored at `(0, 0)` and ending at `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Cumulative (tp, fp) counts per point; the exact-arithmetic backing
    /// for [`auc`].
    #[serde(skip)]
    counts: Vec<(u64, u64)>,
    #[serde(skip)]
    pos: u64,
    #[serde(skip)]
    neg: u64,
}

/// Build the ROC curve of `scores` against 0/1 `labels`.
pub fn roc_curve<T: Scalar>(scores: &[T], labels: &[T]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut pos = 0u64;
    let mut neg = 0u64;
    for &y in labels {
        if y == T::one() {
            pos += 1;
        } else if y == T::zero() {
            neg += 1;
        } else {
            return Err(Error::BadLabel(y.as_f64()));
        }
    }
    if pos == 0 {
        return Err(Error::SingleClass("negatives"));
    }
    if neg == 0 {
        return Err(Error::SingleClass("positives"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must be finite")
    });

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut counts = vec![(0u64, 0u64)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == T::one() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t.as_f64(),
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        counts.push((tp, fp));
    }

    let mut curve = RocCurve {
        points,
        auc: 0.0,
        counts,
        pos,
        neg,
    };
    curve.auc = auc(&curve);
    Ok(curve)
}

/// Trapezoidal integral of the curve over the false-positive-rate axis.
///
/// Evaluated in integer arithmetic over the cumulative counts
/// (`sum dFP * (TP_i + TP_{i-1})` over `2 P N`), which is the same
/// trapezoid sum with a single final division — so for tie-free scores it
/// equals the pair-counting statistic exactly.
pub fn auc(curve: &RocCurve) -> f64 {
    let mut num: u128 = 0;
    for pair in curve.counts.windows(2) {
        let (tp0, fp0) = pair[0];
        let (tp1, fp1) = pair[1];
        num += (fp1 - fp0) as u128 * (tp1 + tp0) as u128;
    }
    num as f64 / (2u128 * curve.pos as u128 * curve.neg as u128) as f64
}

/// Pretty-printed metrics JSON.
pub fn metrics_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// One CSV row shaped like the comparison table of the evaluation report:
/// percentages for the five rates, raw MCC, TP/TN counts, then optional
/// timing columns (left empty when unknown).
pub fn write_table_csv(
    report: &MetricsReport,
    training_time_s: Option<f64>,
    per_image_s: Option<f64>,
    w: &mut impl std::io::Write,
) -> Result<()> {
    writeln!(
        w,
        "accuracy_pct,sensitivity_pct,specificity_pct,precision_pct,f1_pct,mcc,tp,tn,training_time_s,per_image_s"
    )?;
    let fmt_opt = |v: Option<f64>, digits: usize| match v {
        Some(v) => format!("{v:.digits$}"),
        None => String::new(),
    };
    writeln!(
        w,
        "{:.2},{:.2},{:.2},{:.2},{:.2},{:.4},{},{},{},{}",
        report.accuracy * 100.0,
        report.sensitivity * 100.0,
        report.specificity * 100.0,
        report.precision * 100.0,
        report.f1 * 100.0,
        report.mcc,
        report.confusion.tp,
        report.confusion.tn,
        fmt_opt(training_time_s, 2),
        fmt_opt(per_image_s, 6),
    )?;
    Ok(())
}

/// ROC curve as CSV: `threshold,fpr,tpr`.
pub fn write_roc_csv(curve: &RocCurve, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(w, "{},{:.6},{:.6}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

/// Minimal deterministic SVG line plot of the ROC curve. No timestamps or
/// other run-varying content are embedded.
pub fn write_roc_svg(curve: &RocCurve, w: &mut impl std::io::Write) -> Result<()> {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 40.0;
    let span = SIZE - 2.0 * MARGIN;
    let px = |fpr: f64| MARGIN + fpr * span;
    let py = |tpr: f64| SIZE - MARGIN - tpr * span;

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )?;
    writeln!(
        w,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="white" stroke="black" stroke-width="1"/>"#
    )?;
    writeln!(
        w,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )?;
    let path: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
        .collect();
    writeln!(
        w,
        r#"<polyline points="{}" fill="none" stroke="crimson" stroke-width="2"/>"#,
        path.join(" ")
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="14">AUC = {:.4}</text>"#,
        MARGIN + 10.0,
        MARGIN + 20.0,
        curve.auc
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="12">FPR</text>"#,
        SIZE / 2.0 - 12.0,
        SIZE - 10.0
    )?;
    writeln!(
        w,
        r#"<text x="12" y="{}" font-family="monospace" font-size="12" transform="rotate(-90 12 {})">TPR</text>"#,
        SIZE / 2.0 + 12.0,
        SIZE / 2.0 + 12.0
    )?;
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// O(P*N) pair-counting oracle: fraction of (positive, negative) pairs
    /// ranked correctly, ties counted half.
    fn pair_count_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 1.0)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 0.0)
            .map(|(&s, _)| s)
            .collect();
        let mut num = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    num += 1.0;
                } else if p == n {
                    num += 0.5;
                }
            }
        }
        num / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn confusion_trivial_case() {
        let cm = confusion(&[0.9f64, 0.1], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(1, 0, 0, 1));
    }

    #[test]
    fn confusion_threshold_zero_marks_everything_positive() {
        let cm = confusion(&[0.9f64, 0.1, 0.5], &[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(cm.fn_, 0);
        assert_eq!(cm.tn, 0);
        assert_eq!(cm.tp, 1);
        assert_eq!(cm.fp, 2);
    }

    #[test]
    fn confusion_uses_geq_threshold() {
        let cm = confusion(&[0.5f64], &[1.0], 0.5).unwrap();
        assert_eq!(cm.tp, 1);
    }

    #[test]
    fn confusion_matches_brute_force_count() {
        let mut rng = SplitMix64::new(50);
        let scores: Vec<f64> = (0..50).map(|_| rng.next_f64()).collect();
        let labels: Vec<f64> = (0..50).map(|_| f64::from(rng.bernoulli(0.5))).collect();
        let cm = confusion(&scores, &labels, 0.5).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&s, &y) in scores.iter().zip(&labels) {
            match (s >= 0.5, y == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        assert_eq!(cm, ConfusionMatrix::new(tp, fp, fn_, tn));
        assert_eq!(cm.total(), 50);
    }

    #[test]
    fn confusion_rejects_length_mismatch() {
        assert!(matches!(
            confusion(&[0.5f64], &[1.0, 0.0], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn report_near_degenerate_classifier_row() {
        // A classifier that calls almost everything positive.
        let cm = ConfusionMatrix::new(2754, 2756, 2, 0);
        let r = report(&cm).unwrap();
        assert!((r.accuracy * 100.0 - 49.96).abs() < 0.01);
        assert!((r.sensitivity * 100.0 - 99.93).abs() < 0.01);
        assert_eq!(r.specificity, 0.0);
        assert!((r.precision * 100.0 - 49.98).abs() < 0.01);
        assert!((r.f1 * 100.0 - 66.63).abs() < 0.01);
        assert!((r.mcc - (-0.0191)).abs() < 1e-4);
    }

    #[test]
    fn report_strong_classifier_row() {
        // FP/FN solved from sensitivity 94.82% / specificity 97.53% over a
        // 5512-sample evaluation.
        let cm = ConfusionMatrix::new(2652, 67, 145, 2648);
        let r = report(&cm).unwrap();
        assert!((r.accuracy * 100.0 - 96.15).abs() < 0.01);
        assert!((r.sensitivity * 100.0 - 94.82).abs() < 0.01);
        assert!((r.specificity * 100.0 - 97.53).abs() < 0.01);
        assert!((r.precision * 100.0 - 97.54).abs() < 0.01);
        assert!((r.f1 * 100.0 - 96.16).abs() < 0.01);
        assert!((r.mcc - 0.9235).abs() < 1e-4);
    }

    #[test]
    fn report_perfect_classifier() {
        let r = report(&ConfusionMatrix::new(10, 0, 0, 10)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.specificity, 1.0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.mcc, 1.0);
    }

    #[test]
    fn report_zero_denominator_conventions() {
        // No predicted positives: precision 0. No actual positives: tpr 0,
        // and the MCC denominator vanishes.
        let r = report(&ConfusionMatrix::new(0, 0, 0, 5)).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.sensitivity, 0.0);
        assert_eq!(r.mcc, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn report_rejects_empty_matrix() {
        assert!(matches!(
            report(&ConfusionMatrix::new(0, 0, 0, 0)),
            Err(Error::EmptyConfusion)
        ));
    }

    #[test]
    fn roc_perfectly_separated() {
        let scores = [0.9f64, 0.8, 0.2, 0.1];
        let labels = [1.0, 1.0, 0.0, 0.0];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.auc, 1.0);
        assert!(curve.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn roc_constant_scores_is_the_diagonal() {
        let scores = [0.5f64; 6];
        let labels = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.auc, 0.5);
    }

    #[test]
    fn roc_eight_sample_mixed_case_matches_pair_count() {
        let scores = [0.95f64, 0.8, 0.7, 0.65, 0.6, 0.4, 0.3, 0.1];
        let labels = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.auc, pair_count_auc(&scores, &labels));
    }

    #[test]
    fn roc_requires_both_classes() {
        assert!(matches!(
            roc_curve(&[0.2f64, 0.8], &[1.0, 1.0]),
            Err(Error::SingleClass("positives"))
        ));
        assert!(matches!(
            roc_curve(&[0.2f64, 0.8], &[0.0, 0.0]),
            Err(Error::SingleClass("negatives"))
        ));
    }

    #[test]
    fn roc_reversed_scores_gives_one_minus_auc() {
        let mut rng = SplitMix64::new(77);
        let scores: Vec<f64> = (0..40).map(|_| rng.next_f64()).collect();
        let labels: Vec<f64> = (0..40).map(|i| f64::from(i % 2 == 0)).collect();
        let auc_fwd = roc_curve(&scores, &labels).unwrap().auc;
        let reversed: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let auc_rev = roc_curve(&reversed, &labels).unwrap().auc;
        assert!((auc_fwd + auc_rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_fpr_is_non_decreasing() {
        let mut rng = SplitMix64::new(78);
        let scores: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
        let labels: Vec<f64> = (0..64).map(|_| f64::from(rng.bernoulli(0.4))).collect();
        let curve = roc_curve(&scores, &labels).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr);
        }
    }

    #[test]
    fn table_csv_row_shape() {
        let r = report(&ConfusionMatrix::new(2652, 67, 145, 2648)).unwrap();
        let mut buf = Vec::new();
        write_table_csv(&r, Some(477.39), Some(0.0145), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("accuracy_pct,"));
        let row = lines.next().unwrap();
        assert!(
            row.starts_with("96.15,94.82,97.53,97.54,96.16,0.9235,2652,2648,"),
            "{row}"
        );
    }

    #[test]
    fn roc_svg_has_no_timestamps_and_is_deterministic() {
        let scores = [0.9f64, 0.4, 0.6, 0.2];
        let labels = [1.0, 0.0, 1.0, 0.0];
        let curve = roc_curve(&scores, &labels).unwrap();
        let mut a = Vec::new();
        write_roc_svg(&curve, &mut a).unwrap();
        let mut b = Vec::new();
        write_roc_svg(&curve, &mut b).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn mcc_sign_flips_under_prediction_inversion(tp in 0u64..200, fp in 0u64..200, fn_ in 0u64..200, tn in 0u64..200) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let r = report(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            let inv = report(&ConfusionMatrix::new(fn_, tn, tp, fp)).unwrap();
            prop_assert!((r.mcc + inv.mcc).abs() < 1e-12);
        }

        #[test]
        fn f1_is_harmonic_mean_of_precision_and_recall(tp in 1u64..200, fp in 0u64..200, fn_ in 0u64..200, tn in 0u64..200) {
            let r = report(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            // tp >= 1 keeps both PPV and TPR defined and nonzero.
            let harmonic = 2.0 * r.precision * r.sensitivity / (r.precision + r.sensitivity);
            prop_assert!((r.f1 - harmonic).abs() < 1e-12);
        }

        #[test]
        fn report_rates_are_bounded(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let r = report(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            for rate in [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1] {
                prop_assert!((0.0..=1.0).contains(&rate));
            }
            prop_assert!((-1.0..=1.0).contains(&r.mcc));
        }

        #[test]
        fn trapezoid_auc_equals_pair_count_for_tie_free_scores(seed in 0u64..500, n in 4usize..50) {
            let mut rng = SplitMix64::new(seed);
            let mut scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            scores.dedup();
            prop_assume!(scores.len() >= 4);
            let labels: Vec<f64> = (0..scores.len())
                .map(|_| f64::from(rng.bernoulli(0.5)))
                .collect();
            prop_assume!(labels.contains(&1.0) && labels.contains(&0.0));
            let curve = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!(curve.auc, pair_count_auc(&scores, &labels));
        }
    }
}
