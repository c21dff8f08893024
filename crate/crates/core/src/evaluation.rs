//! Binary classification metrics, per-complex reports, and CSV output.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::model::{aggregate_node_predictions, predict, AggregationConfig, PreparedPair, WalleModel};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_labels(y_true: &[bool], y_pred: &[bool]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Invalid(format!(
                "label length {} != prediction length {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Invalid("metrics need at least one sample".into()));
        }
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub confusion: Confusion,
    pub mcc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any metric hit a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn binary_metrics(y_true: &[bool], y_pred: &[bool]) -> Result<BinaryMetrics> {
    let c = Confusion::from_labels(y_true, y_pred)?;
    Ok(metrics_from_confusion(c))
}

pub fn metrics_from_confusion(c: Confusion) -> BinaryMetrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let mut degenerate = false;
    let precision = ratio(tp, tp + fp, &mut degenerate);
    let recall = ratio(tp, tp + fn_, &mut degenerate);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_, &mut degenerate);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den, &mut degenerate);
    BinaryMetrics {
        confusion: c,
        mcc,
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Mann–Whitney AUC with ties counted half; `None` when only one class is present.
pub fn auc_roc(scores: &[f64], y_true: &[bool]) -> Result<Option<f64>> {
    if scores.len() != y_true.len() {
        return Err(Error::Invalid(format!(
            "score length {} != label length {}",
            scores.len(),
            y_true.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // walk tie blocks in ascending score order
    let mut concordant2 = 0u128; // twice the concordant count, ties add 1
    let mut neg_below = 0u128;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let block = &order[k..end];
        let pos = block.iter().filter(|&&i| y_true[i]).count() as u128;
        let neg = block.len() as u128 - pos;
        concordant2 += pos * (2 * neg_below + neg);
        neg_below += neg;
        k = end;
    }
    Ok(Some(concordant2 as f64 / (2.0 * n_pos as f64 * n_neg as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexMetrics {
    pub id: String,
    pub mcc: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc: Option<f64>,
    pub f1: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Mean and standard error (sample std / √n; 0 for a single value).
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Some(Summary {
        mean,
        stderr,
        count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub records: Vec<ComplexMetrics>,
    pub mcc: Summary,
    pub precision: Summary,
    pub recall: Summary,
    /// `None` when every complex was single-class.
    pub auc_roc: Option<Summary>,
    pub f1: Summary,
    pub degenerate_auc: usize,
    pub degenerate_metrics: usize,
}

impl MetricReport {
    pub fn from_records(records: Vec<ComplexMetrics>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Invalid("no complexes to report".into()));
        }
        let col = |f: fn(&ComplexMetrics) -> f64| -> Summary {
            summarize(&records.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
        };
        let aucs: Vec<f64> = records.iter().filter_map(|r| r.auc_roc).collect();
        Ok(MetricReport {
            mcc: col(|r| r.mcc),
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
            auc_roc: summarize(&aucs),
            f1: col(|r| r.f1),
            degenerate_auc: records.len() - aucs.len(),
            degenerate_metrics: records.iter().filter(|r| r.degenerate).count(),
            records,
        })
    }

    /// `id,mcc,precision,recall,auc_roc,f1`, one row per complex, then `mean` and `stderr`.
    pub fn to_csv(&self) -> String {
        let num = |v: f64| format!("{v:.6}");
        let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "NA".into());
        let mut out = String::from("id,mcc,precision,recall,auc_roc,f1\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.id,
                num(r.mcc),
                num(r.precision),
                num(r.recall),
                opt(r.auc_roc),
                num(r.f1)
            );
        }
        let auc = self.auc_roc;
        let _ = writeln!(
            out,
            "mean,{},{},{},{},{}",
            num(self.mcc.mean),
            num(self.precision.mean),
            num(self.recall.mean),
            opt(auc.map(|s| s.mean)),
            num(self.f1.mean)
        );
        let _ = writeln!(
            out,
            "stderr,{},{},{},{},{}",
            num(self.mcc.stderr),
            num(self.precision.stderr),
            num(self.recall.stderr),
            opt(auc.map(|s| s.stderr)),
            num(self.f1.stderr)
        );
        out
    }
}

fn record(id: &str, y_true: &[bool], y_pred: &[bool], scores: &[f64]) -> Result<ComplexMetrics> {
    let m = binary_metrics(y_true, y_pred)?;
    Ok(ComplexMetrics {
        id: id.to_string(),
        mcc: m.mcc,
        precision: m.precision,
        recall: m.recall,
        auc_roc: auc_roc(scores, y_true)?,
        f1: m.f1,
        degenerate: m.degenerate,
    })
}

/// Link threshold on edge probabilities.
pub const LINK_THRESHOLD: f64 = 0.5;

/// Node and link metrics for one complex from stored edge probabilities.
pub fn evaluate_predictions(
    id: &str,
    probs: &Tensor,
    labels: &[f64],
    node_labels: &[bool],
    aggregation: &AggregationConfig,
) -> Result<(ComplexMetrics, ComplexMetrics)> {
    if labels.len() != probs.data.len() || node_labels.len() != probs.cols {
        return Err(Error::Shape(format!("{id}: predictions do not match label shapes")));
    }
    let (scores, node_pred) = aggregate_node_predictions(probs, aggregation);
    let node = record(id, node_labels, &node_pred, &scores)?;
    let y: Vec<bool> = labels.iter().map(|&v| v == 1.0).collect();
    let pred: Vec<bool> = probs.data.iter().map(|&p| p > LINK_THRESHOLD).collect();
    let link = record(id, &y, &pred, &probs.data)?;
    Ok((node, link))
}

pub struct TestsetReport {
    pub node: MetricReport,
    pub link: MetricReport,
}

/// Evaluates every complex (in parallel) and reduces in input order.
pub fn evaluate_testset(model: &WalleModel, pairs: &[PreparedPair], aggregation: &AggregationConfig) -> Result<TestsetReport> {
    if pairs.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    let per: Vec<(ComplexMetrics, ComplexMetrics)> = pairs
        .par_iter()
        .map(|p| {
            let pred = predict(model, p)?;
            evaluate_predictions(&p.id, &pred.probs, &p.labels, &p.node_labels, aggregation)
        })
        .collect::<Result<_>>()?;
    let (node, link): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(TestsetReport {
        node: MetricReport::from_records(node)?,
        link: MetricReport::from_records(link)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let c = Confusion { tp: 25, fp: 25, tn: 25, fn_: 25 };
        let m = metrics_from_confusion(c);
        assert_eq!((m.mcc, m.precision, m.recall, m.f1), (0.0, 0.5, 0.5, 0.5));
        assert!(!m.degenerate);
        let y = [true, false, true, false];
        let m = binary_metrics(&y, &y).unwrap();
        assert_eq!((m.mcc, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(binary_metrics(&y, &y[..3]).is_err());
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = binary_metrics(&[false, false], &[false, false]).unwrap();
        assert_eq!((m.mcc, m.precision, m.recall, m.f1), (0.0, 0.0, 0.0, 0.0));
        assert!(m.degenerate);
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), Some(1.0));
        assert_eq!(auc_roc(&[0.3; 4], &[false, true, true, false]).unwrap(), Some(0.5));
        assert_eq!(auc_roc(&[0.3, 0.4], &[true, true]).unwrap(), None);
    }

    #[test]
    fn summaries() {
        let s = summarize(&[0.7]).unwrap();
        assert_eq!((s.mean, s.stderr), (0.7, 0.0));
        let s = summarize(&[0.2, 0.6]).unwrap();
        let std = ((0.2f64 - 0.4).powi(2) * 2.0).sqrt();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.stderr - std / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_report_ones() {
        let labels = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let probs = Tensor::from_vec(2, 3, labels.iter().map(|&y| if y == 1.0 { 0.99 } else { 0.01 }).collect()).unwrap();
        let (node, link) = evaluate_predictions(
            "c",
            &probs,
            &labels,
            &[true, false, false],
            &AggregationConfig { node_threshold: 0.5 },
        )
        .unwrap();
        assert_eq!(link.mcc, 1.0);
        assert_eq!(node.mcc, 1.0);
        let r = MetricReport::from_records(vec![link]).unwrap();
        assert_eq!(r.mcc.stderr, 0.0);
        assert!(r.to_csv().starts_with("id,mcc,precision,recall,auc_roc,f1\n"));
        assert!(r.to_csv().contains("\nstderr,0.000000,"));
    }

    fn brute_auc(scores: &[f64], y: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            match auc_roc(&scores, &y).unwrap() {
                Some(a) => prop_assert!((a - brute_auc(&scores, &y)).abs() < 1e-12),
                None => prop_assert!(y.iter().all(|&v| v) || y.iter().all(|&v| !v)),
            }
        }

        #[test]
        fn auc_monotone_invariant(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..30)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let t: Vec<f64> = s.iter().map(|v| (v * 0.5).exp() + 3.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assert_eq!(auc_roc(&s, &y).unwrap(), auc_roc(&t, &y).unwrap());
        }

        #[test]
        fn double_flip_preserves_mcc(
            data in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)
        ) {
            let y: Vec<bool> = data.iter().map(|d| d.0).collect();
            let p: Vec<bool> = data.iter().map(|d| d.1).collect();
            let ny: Vec<bool> = y.iter().map(|v| !v).collect();
            let np: Vec<bool> = p.iter().map(|v| !v).collect();
            let a = binary_metrics(&y, &p).unwrap();
            let b = binary_metrics(&ny, &np).unwrap();
            prop_assert!((a.mcc - b.mcc).abs() < 1e-12);
            if a.precision + a.recall > 0.0 {
                let f1 = 2.0 * a.precision * a.recall / (a.precision + a.recall);
                prop_assert!((a.f1 - f1).abs() < 1e-12);
            }
        }
    }
}
