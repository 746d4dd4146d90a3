use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ClassReport, ConfusionMatrix, ReportError, RocCurve};
use crate::train::History;

/// Everything [`emit`] can write. Only the report and confusion matrix are
/// required.
#[derive(Debug, Clone, Copy)]
pub struct EmitInput<'a> {
    pub report: &'a ClassReport,
    pub confusion: &'a ConfusionMatrix,
    pub rocs: &'a [RocCurve],
    pub history: Option<&'a History>,
    /// Also write `curves.svg` (needs a history) and `confusion.svg`.
    pub svg: bool,
}

/// A rate as an integer percentage, rounded half up.
pub fn percent(rate: f64) -> u64 {
    // The epsilon keeps exact halves such as 0.945 from rounding down.
    (rate * 100.0 + 0.5 + 1e-9).floor() as u64
}

/// Fixed-width classification table with integer percentages.
pub fn format_report_table(r: &ClassReport) -> String {
    let width = r.classes.iter().map(|c| c.name.len()).chain([12]).max().unwrap_or(12);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>width$}  {:>9} {:>9} {:>9} {:>9}",
        "", "precision", "recall", "f1-score", "support"
    );
    out.push('\n');
    let pct = |v: f64| format!("{}%", percent(v));
    for c in &r.classes {
        let _ = writeln!(
            out,
            "{:>width$}  {:>9} {:>9} {:>9} {:>9}",
            c.name,
            pct(c.precision),
            pct(c.recall),
            pct(c.f1),
            c.support
        );
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:>width$}  {:>9} {:>9} {:>9} {:>9}",
        "accuracy",
        "",
        "",
        pct(r.accuracy),
        r.total
    );
    for (label, a) in [("macro avg", r.macro_avg), ("weighted avg", r.weighted_avg)] {
        let _ = writeln!(
            out,
            "{:>width$}  {:>9} {:>9} {:>9} {:>9}",
            label,
            pct(a.precision),
            pct(a.recall),
            pct(a.f1),
            r.total
        );
    }
    out
}

fn polyline(values: &[f64], x0: f64, y0: f64, w: f64, h: f64, lo: f64, hi: f64) -> String {
    let n = values.len().max(2) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = x0 + w * i as f64 / n as f64;
            let y = y0 + h - h * ((v - lo) / span).clamp(0.0, 1.0);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Accuracy and loss curves side by side.
pub fn curves_svg(h: &History) -> String {
    let mut s = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"840\" height=\"320\" font-family=\"sans-serif\" font-size=\"12\">\n",
    );
    let max_loss = h
        .train_loss
        .iter()
        .chain(&h.val_loss)
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let panels = [
        ("accuracy", &h.train_accuracy, &h.val_accuracy, 0.0, 1.0, 40.0),
        ("loss", &h.train_loss, &h.val_loss, 0.0, max_loss, 460.0),
    ];
    for (title, train, val, lo, hi, x0) in panels {
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"30\" width=\"360\" height=\"240\" fill=\"none\" stroke=\"#999\"/>"
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>",
            x0 + 180.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"290\" text-anchor=\"middle\">epoch</text>",
            x0 + 180.0
        );
        for (series, color) in [(train, "#1f77b4"), (val, "#ff7f0e")] {
            if !series.is_empty() {
                let _ = writeln!(
                    s,
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
                    polyline(series, x0, 30.0, 360.0, 240.0, lo, hi)
                );
            }
        }
    }
    s.push_str("<text x=\"40\" y=\"312\" fill=\"#1f77b4\">train</text>\n<text x=\"90\" y=\"312\" fill=\"#ff7f0e\">validation</text>\n</svg>\n");
    s
}

fn confusion_svg(cm: &ConfusionMatrix) -> String {
    let k = cm.classes();
    let cell = 40.0;
    let margin = 160.0;
    let size = margin + cell * k as f64 + 20.0;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (t, row) in cm.counts.iter().enumerate() {
        let y = margin + cell * t as f64;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            margin - 6.0,
            y + cell / 2.0 + 4.0,
            cm.class_names[t]
        );
        for (p, &c) in row.iter().enumerate() {
            let x = margin + cell * p as f64;
            let shade = 255 - (200.0 * c as f64 / max) as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#fff\"/>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{c}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (p, name) in cm.class_names.iter().enumerate() {
        let x = margin + cell * p as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            "<text transform=\"translate({x},{}) rotate(-60)\">{name}</text>",
            margin - 6.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

/// Writes `report.json`, `report.txt`, `confusion.csv`, one
/// `roc_class_<k>.csv` per curve, `history.csv` when a history is given,
/// and the optional SVGs. Existing files are overwritten. Returns the
/// paths written.
pub fn emit(input: EmitInput<'_>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ReportError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut json = serde_json::to_string_pretty(input.report).expect("report serializes");
    json.push('\n');
    write(dir, "report.json", &json, &mut written)?;
    write(dir, "report.txt", &format_report_table(input.report), &mut written)?;
    write(dir, "confusion.csv", &input.confusion.to_csv(), &mut written)?;
    for roc in input.rocs {
        write(
            dir,
            &format!("roc_class_{}.csv", roc.class_index),
            &roc.to_csv(),
            &mut written,
        )?;
    }
    if let Some(h) = input.history {
        write(dir, "history.csv", &h.to_csv(), &mut written)?;
    }
    if input.svg {
        if let Some(h) = input.history {
            write(dir, "curves.svg", &curves_svg(h), &mut written)?;
        }
        write(dir, "confusion.svg", &confusion_svg(input.confusion), &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalreport::{confusion, report_from_confusion};

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(percent(0.935), 94);
        assert_eq!(percent(0.945), 95);
        assert_eq!(percent(0.9349), 93);
        assert_eq!(percent(1.0), 100);
        assert_eq!(percent(0.0), 0);
    }

    #[test]
    fn emit_writes_expected_files_deterministically() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 0, 0], 2).unwrap();
        let r = report_from_confusion(&cm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let input = EmitInput {
            report: &r,
            confusion: &cm,
            rocs: &[],
            history: None,
            svg: true,
        };
        let files = emit(input, dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["report.json", "report.txt", "confusion.csv", "confusion.svg"]);
        let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        emit(input, dir.path()).unwrap();
        let after: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
        let json = String::from_utf8(before[0].clone()).unwrap();
        let pos: Vec<usize> = [
            "\n  \"classes\"",
            "\n  \"accuracy\"",
            "\n  \"macro_avg\"",
            "\n  \"weighted_avg\"",
            "\n  \"total\"",
        ]
        .iter()
        .map(|k| json.find(k).unwrap())
        .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
    }
}
