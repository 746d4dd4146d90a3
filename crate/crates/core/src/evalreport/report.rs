use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, ReportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class rows plus accuracy and macro/weighted averages. Field order
/// is the `report.json` field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro (unweighted) and support-weighted means of the per-class rows.
pub fn aggregate_check(rows: &[ClassMetrics]) -> Result<(Averages, Averages), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let n = rows.len() as f64;
    let total: u64 = rows.iter().map(|r| r.support).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total as f64
        }
    };
    Ok((
        Averages {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
        },
        Averages {
            precision: weighted(|r| r.precision),
            recall: weighted(|r| r.recall),
            f1: weighted(|r| r.f1),
        },
    ))
}

pub fn report_from_confusion(cm: &ConfusionMatrix) -> Result<ClassReport, ReportError> {
    let total = cm.total();
    if total == 0 {
        return Err(ReportError::Empty);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let classes: Vec<ClassMetrics> = (0..cm.classes())
        .map(|k| {
            let tp = cm.counts[k][k];
            let precision = ratio(tp, cols[k]);
            let recall = ratio(tp, rows[k]);
            ClassMetrics {
                name: cm.class_names[k].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: rows[k],
            }
        })
        .collect();
    let (macro_avg, mut weighted_avg) = aggregate_check(&classes)?;
    weighted_avg.recall = ratio(cm.trace(), total);
    Ok(ClassReport {
        classes,
        accuracy: ratio(cm.trace(), total),
        macro_avg,
        weighted_avg,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalreport::confusion;

    fn row(p: f64, r: f64, s: u64) -> ClassMetrics {
        ClassMetrics {
            name: String::new(),
            precision: p,
            recall: r,
            f1: f1_score(p, r),
            support: s,
        }
    }

    #[test]
    fn f1_of_published_rows() {
        assert!((f1_score(0.88, 1.00) - 0.93617).abs() < 1e-5);
        assert!((f1_score(1.00, 0.75) - 0.85714).abs() < 1e-5);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_two_class() {
        let cm = confusion(&[0, 1], &[0, 1], 2).unwrap();
        let r = report_from_confusion(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for c in &r.classes {
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.macro_avg, r.weighted_avg);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let cm = confusion(&[0, 0, 0], &[0, 1, 1], 2).unwrap();
        let r = report_from_confusion(&cm).unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert_eq!(r.classes[1].f1, 0.0);
        assert_eq!(r.classes[1].support, 2);
    }

    #[test]
    fn aggregate_edge_cases() {
        let single = [row(0.7, 0.4, 9)];
        let (m, w) = aggregate_check(&single).unwrap();
        assert_eq!(m, w);
        assert_eq!(m.precision, 0.7);
        let equal = [row(0.7, 0.4, 5), row(0.2, 0.9, 5), row(0.5, 0.5, 5)];
        let (m, w) = aggregate_check(&equal).unwrap();
        assert!((m.precision - w.precision).abs() < 1e-15);
        assert!((m.f1 - w.f1).abs() < 1e-15);
        assert!(matches!(aggregate_check(&[]), Err(ReportError::Empty)));
        assert!(report_from_confusion(&confusion(&[], &[], 3).unwrap()).is_err());
    }
}
