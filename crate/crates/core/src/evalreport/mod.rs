//! Classification metrics and report files.

mod confusion;
mod emit;
mod report;
mod roc;

pub use confusion::{confusion, ConfusionMatrix};
pub use emit::{curves_svg, emit, format_report_table, percent, EmitInput};
pub use report::{aggregate_check, f1_score, report_from_confusion, Averages, ClassMetrics, ClassReport};
pub use roc::{roc_curve, roc_one_vs_rest, RocCurve};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("class index {value} out of range for {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no examples to report on")]
    Empty,
    #[error("ROC for class {class} is undefined: {positives} positives, {negatives} negatives")]
    UndefinedCurve {
        class: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
