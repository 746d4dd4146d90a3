use serde::{Deserialize, Serialize};

use super::ReportError;

/// `counts[t][p]`: examples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    /// Per-class support (row sums).
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes())
            .map(|p| self.counts.iter().map(|r| r[p]).sum())
            .collect()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.classes(), "one name per class");
        self.class_names = names;
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for n in &self.class_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix, ReportError> {
    if preds.len() != labels.len() {
        return Err(ReportError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &t) in preds.iter().zip(labels) {
        for value in [p, t] {
            if value >= classes {
                return Err(ReportError::ClassOutOfRange { value, classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..classes).map(|k| k.to_string()).collect(),
    })
}
