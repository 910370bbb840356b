//! Classification metrics: confusion matrix, accuracy, per-class
//! precision/recall/F1, macro-F1, and mean average precision.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation report. The confusion matrix (rows = true class,
/// columns = predicted class) is present for multiclass tasks only.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub confusion: Option<Vec<Vec<usize>>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Mean average precision; absent when no class has a relevant instance.
    pub map: Option<f64>,
    /// Classes excluded from the mAP mean for lacking relevant instances.
    pub map_excluded_classes: Vec<usize>,
    pub evaluated: usize,
    /// Instances skipped because no modality survived (e.g. the dropped
    /// modality was their only one).
    pub skipped: usize,
}

/// C×C counts from paired (truth, prediction) class indices.
pub fn confusion_matrix(truths: &[usize], preds: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if truths.len() != preds.len() {
        return Err(Error::Shape(format!(
            "confusion_matrix: {} truths vs {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let mut m = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truths.iter().zip(preds) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Data(format!(
                "confusion_matrix: class {} out of range {num_classes}",
                t.max(p)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-class precision/recall/F1 from a confusion matrix; empty classes
/// (no truths and no predictions) score 0 by convention.
pub fn class_metrics_from_confusion(confusion: &[Vec<usize>]) -> Vec<ClassMetrics> {
    let c = confusion.len();
    (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let pred_k: f64 = (0..c).map(|t| confusion[t][k] as f64).sum();
            let true_k: f64 = confusion[k].iter().map(|&x| x as f64).sum();
            let precision = safe_div(tp, pred_k);
            let recall = safe_div(tp, true_k);
            let f1 = safe_div(2.0 * precision * recall, precision + recall);
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

pub fn accuracy_from_confusion(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = confusion.iter().enumerate().map(|(i, row)| row[i]).sum();
    safe_div(trace as f64, total as f64)
}

/// Mean average precision. Per class, instances are ranked by descending
/// score (stable, so ties keep original order) and
/// AP = Σ_k precision@k · rel_k / #relevant. Classes without any relevant
/// instance are excluded from the mean and reported separately.
pub fn mean_average_precision(
    scores: &Matrix,
    relevance: &[Vec<bool>],
) -> Result<(Option<f64>, Vec<usize>)> {
    let n = scores.rows();
    let c = scores.cols();
    if relevance.len() != n || relevance.iter().any(|r| r.len() != c) {
        return Err(Error::Shape(format!(
            "mean_average_precision: relevance shape vs scores {n}x{c}"
        )));
    }
    let mut aps = Vec::new();
    let mut excluded = Vec::new();
    for class in 0..c {
        let n_rel = relevance.iter().filter(|r| r[class]).count();
        if n_rel == 0 {
            excluded.push(class);
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        // stable sort by descending score keeps original order on ties
        order.sort_by(|&a, &b| {
            scores
                .get(b, class)
                .partial_cmp(&scores.get(a, class))
                .unwrap()
        });
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if relevance[i][class] {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(ap / n_rel as f64);
    }
    let map = if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    };
    Ok((map, excluded))
}

/// Assemble a multiclass report from predictions and per-class scores.
pub fn multiclass_report(
    truths: &[usize],
    preds: &[usize],
    scores: &Matrix,
    num_classes: usize,
    skipped: usize,
) -> Result<MetricsReport> {
    let confusion = confusion_matrix(truths, preds, num_classes)?;
    let per_class = class_metrics_from_confusion(&confusion);
    let accuracy = accuracy_from_confusion(&confusion);
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
    let relevance: Vec<Vec<bool>> = truths
        .iter()
        .map(|&t| (0..num_classes).map(|c| c == t).collect())
        .collect();
    let (map, map_excluded_classes) = mean_average_precision(scores, &relevance)?;
    Ok(MetricsReport {
        confusion: Some(confusion),
        accuracy,
        per_class,
        macro_f1,
        map,
        map_excluded_classes,
        evaluated: truths.len(),
        skipped,
    })
}

/// Assemble a multilabel report: per-class binary counts at a 0.5 sigmoid
/// threshold, exact-match accuracy, and mAP over the label sets.
pub fn multilabel_report(
    truth_sets: &[Vec<bool>],
    pred_sets: &[Vec<bool>],
    scores: &Matrix,
    num_classes: usize,
    skipped: usize,
) -> Result<MetricsReport> {
    let n = truth_sets.len();
    if pred_sets.len() != n {
        return Err(Error::Shape("multilabel_report: length mismatch".into()));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = (0..n).filter(|&i| truth_sets[i][c] && pred_sets[i][c]).count() as f64;
        let fp = (0..n).filter(|&i| !truth_sets[i][c] && pred_sets[i][c]).count() as f64;
        let fn_ = (0..n).filter(|&i| truth_sets[i][c] && !pred_sets[i][c]).count() as f64;
        let precision = safe_div(tp, tp + fp);
        let recall = safe_div(tp, tp + fn_);
        let f1 = safe_div(2.0 * precision * recall, precision + recall);
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
        });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
    let exact = (0..n).filter(|&i| truth_sets[i] == pred_sets[i]).count();
    let (map, map_excluded_classes) = mean_average_precision(scores, truth_sets)?;
    Ok(MetricsReport {
        confusion: None,
        accuracy: safe_div(exact as f64, n as f64),
        per_class,
        macro_f1,
        map,
        map_excluded_classes,
        evaluated: n,
        skipped,
    })
}
