//! Classification and regression metrics.
//!
//! The binary "AUC" is the area under the precision-recall curve (average
//! precision), not the ROC area.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// Average precision; `None` when the labels contain a single class.
    pub auc: Option<f64>,
    /// F1 of the positive class.
    pub f1: f64,
    /// `None` when the labels contain a single class; 0 when only the
    /// predictions are single-class.
    pub mcc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    /// `None` for constant targets.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    /// `None` for constant targets or constant predictions.
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricReport {
    Binary(BinaryMetrics),
    Multiclass(MulticlassMetrics),
    Regression(RegressionMetrics),
}

impl MetricReport {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricReport::Binary(_) => "binary",
            MetricReport::Multiclass(_) => "multiclass",
            MetricReport::Regression(_) => "regression",
        }
    }

    /// Metric names and values in a fixed order; `None` is undefined.
    pub fn entries(&self) -> Vec<(&'static str, Option<f64>)> {
        match *self {
            MetricReport::Binary(m) => vec![
                ("acc", Some(m.accuracy)),
                ("auc", m.auc),
                ("f1", Some(m.f1)),
                ("mcc", m.mcc),
            ],
            MetricReport::Multiclass(m) => vec![
                ("acc", Some(m.accuracy)),
                ("f1_macro", Some(m.f1_macro)),
                ("f1_micro", Some(m.f1_micro)),
                ("kappa", Some(m.kappa)),
            ],
            MetricReport::Regression(m) => vec![
                ("r2", m.r2),
                ("mae", Some(m.mae)),
                ("rmse", Some(m.rmse)),
                ("pearson_r", m.pearson),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries().into_iter().find(|(n, _)| *n == name).and_then(|(_, v)| v)
    }

    /// Accuracy for classification reports.
    pub fn accuracy(&self) -> Option<f64> {
        self.get("acc")
    }

    fn from_entries(kind: &str, values: &[Option<f64>]) -> Result<Self> {
        let req = |v: Option<f64>| v.ok_or_else(|| Error::Config(format!("undefined required {kind} metric")));
        Ok(match kind {
            "binary" => MetricReport::Binary(BinaryMetrics {
                accuracy: req(values[0])?,
                auc: values[1],
                f1: req(values[2])?,
                mcc: values[3],
            }),
            "multiclass" => MetricReport::Multiclass(MulticlassMetrics {
                accuracy: req(values[0])?,
                f1_macro: req(values[1])?,
                f1_micro: req(values[2])?,
                kappa: req(values[3])?,
            }),
            "regression" => MetricReport::Regression(RegressionMetrics {
                r2: values[0],
                mae: req(values[1])?,
                rmse: req(values[2])?,
                pearson: values[3],
            }),
            other => return Err(Error::Config(format!("unknown report kind {other:?}"))),
        })
    }

    /// Flat `key=value` block; undefined values print as `undefined`.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("kind={}\n", self.kind());
        for (name, value) in self.entries() {
            let _ = writeln!(out, "{name}={}", fmt_value(value));
        }
        out
    }

    pub fn csv_header(&self) -> String {
        self.entries().iter().map(|(n, _)| *n).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.entries().iter().map(|(_, v)| fmt_value(*v)).collect::<Vec<_>>().join(",")
    }
}

pub fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

/// Per-metric arithmetic mean of same-kind reports. A metric undefined in
/// any report is undefined in the mean.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports.first().ok_or(Error::Empty("mean_report"))?;
    if reports.iter().any(|r| r.kind() != first.kind()) {
        return Err(Error::Config("cannot average reports of different kinds".into()));
    }
    let n = reports.len() as f64;
    let width = first.entries().len();
    let means: Vec<Option<f64>> = (0..width)
        .map(|k| {
            reports
                .iter()
                .map(|r| r.entries()[k].1)
                .sum::<Option<f64>>()
                .map(|s| s / n)
        })
        .collect();
    MetricReport::from_entries(first.kind(), &means)
}

fn check_lengths(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, &[a], &[b]));
    }
    if a == 0 {
        return Err(Error::Empty(op));
    }
    Ok(())
}

/// Average precision: `Σ_k (R_k − R_{k−1}) · P_k` over descending distinct
/// score thresholds.
pub fn average_precision(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Binary metrics from positive-class scores; a score ≥ 0.5 predicts 1.
pub fn binary_metrics(scores: &[f64], labels: &[usize]) -> Result<BinaryMetrics> {
    check_lengths(scores.len(), labels.len(), "binary_metrics")?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::TargetOutOfRange { target: bad, classes: 2 });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let n = scores.len() as f64;
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    let single_class = tp + fn_ == 0.0 || tn + fp == 0.0;
    let mcc = if single_class {
        None
    } else {
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        Some(if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom })
    };
    Ok(BinaryMetrics {
        accuracy: (tp + tn) / n,
        auc: average_precision(scores, labels),
        f1,
        mcc,
    })
}

/// Multi-class metrics; `classes` absent from both lists contribute an F1 of 0
/// to the macro average.
pub fn multiclass_metrics(predicted: &[usize], truth: &[usize], classes: usize) -> Result<MulticlassMetrics> {
    check_lengths(predicted.len(), truth.len(), "multiclass_metrics")?;
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&c| c >= classes) {
        return Err(Error::TargetOutOfRange { target: bad, classes });
    }
    let mut confusion = vec![vec![0f64; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1.0;
    }
    let n = predicted.len() as f64;
    let correct: f64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut f1_sum = 0.0;
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    let mut chance = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c];
        let row: f64 = confusion[c].iter().sum();
        let col: f64 = (0..classes).map(|t| confusion[t][c]).sum();
        let (fp, fn_) = (col - tp, row - tp);
        if tp > 0.0 {
            f1_sum += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        chance += (row / n) * (col / n);
    }
    let observed = correct / n;
    let kappa = if chance >= 1.0 { 1.0 } else { (observed - chance) / (1.0 - chance) };
    Ok(MulticlassMetrics {
        accuracy: observed,
        f1_macro: f1_sum / classes as f64,
        f1_micro: 2.0 * tp_all / (2.0 * tp_all + fp_all + fn_all),
        kappa,
    })
}

pub fn regression_metrics(predictions: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    check_lengths(predictions.len(), targets.len(), "regression_metrics")?;
    let n = predictions.len() as f64;
    let mean_t = targets.iter().sum::<f64>() / n;
    let mean_p = predictions.iter().sum::<f64>() / n;
    let (mut ss_res, mut ss_tot, mut abs) = (0.0, 0.0, 0.0);
    let (mut cov, mut var_p) = (0.0, 0.0);
    for (&p, &t) in predictions.iter().zip(targets) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - mean_t) * (t - mean_t);
        abs += (t - p).abs();
        cov += (p - mean_p) * (t - mean_t);
        var_p += (p - mean_p) * (p - mean_p);
    }
    // Exact comparison: a rounded mean can leave a tiny nonzero spread.
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    let (flat_t, flat_p) = (constant(targets), constant(predictions));
    let r2 = (!flat_t).then(|| 1.0 - ss_res / ss_tot);
    let pearson = (!flat_t && !flat_p).then(|| (cov / (var_p.sqrt() * ss_tot.sqrt())).clamp(-1.0, 1.0));
    Ok(RegressionMetrics {
        r2,
        mae: abs / n,
        rmse: (ss_res / n).sqrt(),
        pearson,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_binary() {
        let m = binary_metrics(&[0.9, 0.1, 0.8, 0.3], &[1, 0, 1, 0]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.mcc, Some(1.0));
    }

    #[test]
    fn ties_at_half_predict_positive() {
        let m = binary_metrics(&[0.5; 4], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // All predictions positive: the negative-prediction marginal is zero.
        assert_eq!(m.mcc, Some(0.0));
        assert_eq!(m.auc, Some(0.5));
    }

    #[test]
    fn six_sample_fixture() {
        // Sorted by score: 0.9(1) 0.8(0) 0.7(1) 0.4(1) 0.3(0) 0.2(0).
        let scores = [0.7, 0.2, 0.9, 0.3, 0.8, 0.4];
        let labels = [1, 0, 1, 0, 0, 1];
        let m = binary_metrics(&scores, &labels).unwrap();
        // Threshold 0.5: tp 2, fp 1, fn 1, tn 2.
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.f1 - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.mcc.unwrap() - (4.0 - 1.0) / 9.0).abs() < 1e-15);
        // Recall steps 1/3 at precisions 1, 2/3, 3/4.
        let ap = (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
        assert!((m.auc.unwrap() - ap).abs() < 1e-15);
    }

    #[test]
    fn single_class_labels_are_undefined() {
        let m = binary_metrics(&[0.2, 0.7], &[1, 1]).unwrap();
        assert_eq!(m.auc, None);
        assert_eq!(m.mcc, None);
        assert!(binary_metrics(&[0.1], &[2]).is_err());
        assert!(binary_metrics(&[], &[]).is_err());
    }

    #[test]
    fn multiclass_fixture() {
        let truth = [0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 1, 1, 1, 2, 2, 2, 0];
        let m = multiclass_metrics(&pred, &truth, 3).unwrap();
        assert!((m.accuracy - 5.0 / 8.0).abs() < 1e-15);
        let f1 = [2.0 / 4.0, 4.0 / 6.0, 4.0 / 6.0];
        assert!((m.f1_macro - f1.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!((m.f1_micro - 5.0 / 8.0).abs() < 1e-15);
        let pe = (2.0 * 2.0 + 3.0 * 3.0 + 3.0 * 3.0) / 64.0;
        assert!((m.kappa - (5.0 / 8.0 - pe) / (1.0 - pe)).abs() < 1e-15);

        let perfect = multiclass_metrics(&truth, &truth, 10).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.kappa, 1.0);
        assert!((perfect.f1_macro - 0.3).abs() < 1e-15);
        let constant = multiclass_metrics(&[4, 4], &[4, 4], 10).unwrap();
        assert_eq!(constant.kappa, 1.0);
    }

    #[test]
    fn chance_agreement_gives_zero_kappa() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, crate::rng::Stream::GradCheck);
        let n = 50_000;
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let m = multiclass_metrics(&pred, &truth, 4).unwrap();
        assert!(m.kappa.abs() < 0.02, "{}", m.kappa);
    }

    #[test]
    fn regression_fixtures() {
        let t = [1.0, 2.0, 4.0, 3.0, 5.0];
        let m = regression_metrics(&t, &t).unwrap();
        assert_eq!((m.r2, m.mae, m.rmse), (Some(1.0), 0.0, 0.0));
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-15);
        let mean = regression_metrics(&[3.0; 5], &t).unwrap();
        assert_eq!(mean.r2, Some(0.0));
        assert_eq!(mean.pearson, None);

        let p = [1.5, 1.0, 4.0, 2.0, 6.0];
        let m = regression_metrics(&p, &t).unwrap();
        let res: f64 = [0.25, 1.0, 0.0, 1.0, 1.0].iter().sum();
        assert!((m.r2.unwrap() - (1.0 - res / 10.0)).abs() < 1e-12);
        assert!((m.mae - 3.5 / 5.0).abs() < 1e-12);
        assert!((m.rmse - (res / 5.0).sqrt()).abs() < 1e-12);
        assert_eq!(regression_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap().r2, None);
        let tenths = regression_metrics(&[0.3, 0.2, 0.1], &[0.1; 3]).unwrap();
        assert_eq!((tenths.r2, tenths.pearson), (None, None));
    }

    #[test]
    fn report_serialization_and_means() {
        let a = MetricReport::Binary(BinaryMetrics {
            accuracy: 0.7,
            auc: Some(0.5),
            f1: 0.6,
            mcc: None,
        });
        let b = MetricReport::Binary(BinaryMetrics {
            accuracy: 0.8,
            auc: Some(0.7),
            f1: 0.4,
            mcc: Some(0.2),
        });
        let m = mean_report(&[a, b]).unwrap();
        assert!((m.accuracy().unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(m.get("mcc"), None);
        assert_eq!(mean_report(&[a]).unwrap(), a);
        assert_eq!(a.csv_header(), "acc,auc,f1,mcc");
        assert_eq!(a.csv_row(), "0.7,0.5,0.6,undefined");
        assert!(a.to_key_values().starts_with("kind=binary\nacc=0.7\n"));
        let r = MetricReport::Regression(regression_metrics(&[1.0, 2.0], &[1.0, 3.0]).unwrap());
        assert!(mean_report(&[a, r]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_and_relabel_invariance(
            rows in prop::collection::vec((0.0f64..1.0, 0usize..2), 2..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let (scores, labels): (Vec<f64>, Vec<usize>) = rows.iter().copied().unzip();
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.shuffle(&mut crate::rng::substream(seed, crate::rng::Stream::DataOrder));
            let s2: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let l2: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let a = binary_metrics(&scores, &labels).unwrap();
            let b = binary_metrics(&s2, &l2).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert_eq!(a.auc.map(|x| (x * 1e9).round()), b.auc.map(|x| (x * 1e9).round()));
            prop_assert_eq!(a.mcc.map(|x| (x * 1e9).round()), b.mcc.map(|x| (x * 1e9).round()));

            // Swapping class names (and mirroring scores away from the
            // threshold) preserves MCC.
            let flipped: Vec<f64> = scores.iter().map(|s| if *s >= 0.5 { 0.25 } else { 0.75 }).collect();
            let relabeled: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
            let c = binary_metrics(&flipped, &relabeled).unwrap();
            match (a.mcc, c.mcc) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
            let pred: Vec<usize> = scores.iter().map(|s| usize::from(*s >= 0.5)).collect();
            let k1 = multiclass_metrics(&pred, &labels, 2).unwrap().kappa;
            let k2 = multiclass_metrics(
                &pred.iter().map(|p| 1 - p).collect::<Vec<_>>(),
                &relabeled,
                2,
            ).unwrap().kappa;
            prop_assert!((k1 - k2).abs() < 1e-12);
        }

        #[test]
        fn pearson_affine_invariance(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..15),
            a in 0.1f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = regression_metrics(&p, &t).unwrap();
            let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            let n = regression_metrics(&q, &t).unwrap();
            if let (Some(x), Some(y)) = (m.pearson, n.pearson) {
                prop_assert!((x - y).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&x));
            }
            prop_assert!(m.mae >= 0.0 && m.rmse >= 0.0);
        }
    }
}
