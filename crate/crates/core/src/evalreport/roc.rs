use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::tensor::{Real, Tensor};

/// One-vs-rest ROC curve. `points[i]` is `(fpr, tpr)` when everything
/// scoring at least `thresholds[i]` is called positive; the first point
/// uses threshold `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class_index: usize,
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for (t, (f, p)) in self.thresholds.iter().zip(&self.points) {
            out.push_str(&format!("{t},{f},{p}\n"));
        }
        out
    }
}

/// ROC over a score column and positive flags. Tied scores form one sweep
/// point; the trapezoidal area is accumulated on integer counts, which makes
/// it equal `P(pos > neg) + ½·P(pos = neg)`.
pub fn roc_curve(scores: &[f64], positive: &[bool], class_index: usize) -> Result<RocCurve, ReportError> {
    if scores.len() != positive.len() {
        return Err(ReportError::LengthMismatch {
            preds: scores.len(),
            labels: positive.len(),
        });
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ReportError::UndefinedCurve {
            class: class_index,
            positives: pos,
            negatives: neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one (positive, negative) pair.
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve {
        class_index,
        points,
        thresholds,
        auc: area2 as f64 / (2 * pos as u128 * neg as u128) as f64,
    })
}

/// ROC for column `k` of `scores` with class `k` as the positive class.
pub fn roc_one_vs_rest<T: Real>(scores: &Tensor<T>, labels: &[usize], k: usize) -> Result<RocCurve, ReportError> {
    let (n, classes) = scores.dims2("roc_one_vs_rest").map_err(|_| ReportError::Empty)?;
    if k >= classes {
        return Err(ReportError::ClassOutOfRange { value: k, classes });
    }
    if labels.len() != n {
        return Err(ReportError::LengthMismatch {
            preds: n,
            labels: labels.len(),
        });
    }
    let column: Vec<f64> = scores.data().chunks(classes).map(|r| r[k].as_f64()).collect();
    let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
    roc_curve(&column, &positive, k)
}
