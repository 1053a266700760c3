//! Confusion matrices and per-class precision / recall / F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `K × K` counts; rows are true classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim(format!(
                "{} counts do not form a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::input(format!(
                "label pair ({truth}, {pred}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.row(k).iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    /// Writes the matrix as CSV with class names on both axes.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        check_names(class_names, self.classes)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\pred".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for (k, name) in class_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.row(k).iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }

    /// Self-contained SVG heatmap. Colour is the row-normalized fraction so
    /// small classes stay readable; cells are annotated with raw counts.
    pub fn to_svg(&self, class_names: &[String], title: &str) -> Result<String> {
        check_names(class_names, self.classes)?;
        const CELL: usize = 28;
        let label_w = 8 * class_names.iter().map(|n| n.chars().count()).max().unwrap_or(1) + 12;
        let top = label_w + 36;
        let size = self.classes * CELL;
        let (width, height) = (label_w + size + 20, top + size + 40);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
            width / 2,
            escape(title)
        );
        for (k, name) in class_names.iter().enumerate() {
            let c = k * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                label_w - 4,
                top + c,
                escape(name)
            );
            let _ = writeln!(
                s,
                r#"<text transform="translate({},{}) rotate(-90)" font-size="11" dominant-baseline="middle">{}</text>"#,
                label_w + c,
                top - 4,
                escape(name)
            );
        }
        for i in 0..self.classes {
            let row_total = self.row_sum(i);
            for j in 0..self.classes {
                let n = self.get(i, j);
                let frac = if row_total == 0 {
                    0.0
                } else {
                    n as f64 / row_total as f64
                };
                let (r, g, b) = shade(frac);
                let (x, y) = (label_w + j * CELL, top + i * CELL);
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#dddddd"/>"##
                );
                if n > 0 {
                    let ink = if frac > 0.5 { "white" } else { "black" };
                    let _ = writeln!(
                        s,
                        r#"<text x="{}" y="{}" font-size="10" fill="{ink}" text-anchor="middle" dominant-baseline="middle">{n}</text>"#,
                        x + CELL / 2,
                        y + CELL / 2
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">Predicted</text>"#,
            label_w + size / 2,
            top + size + 24
        );
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn shade(frac: f64) -> (u8, u8, u8) {
    // white → dark blue
    let lerp = |lo: f64, hi: f64| (hi + (lo - hi) * frac.clamp(0.0, 1.0)).round() as u8;
    (lerp(8.0, 255.0), lerp(48.0, 255.0), lerp(107.0, 255.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn check_names(names: &[String], classes: usize) -> Result<()> {
    if names.len() != classes {
        return Err(Error::config(format!(
            "{} class names for {classes} classes",
            names.len()
        )));
    }
    Ok(())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut m = ConfusionMatrix::new(classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m.record(t, p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Aggregate,
    pub weighted_avg: Aggregate,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_report(confusion: &ConfusionMatrix) -> Result<EvalReport> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::input("confusion matrix is empty"));
    }
    let k = confusion.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion.get(c, c);
            let support = confusion.row_sum(c);
            let (precision, precision_undefined) = ratio(tp, confusion.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, support);
            let denom = precision + recall;
            let (f1, f1_undefined) = if denom > 0.0 {
                (2.0 * precision * recall / denom, false)
            } else {
                (0.0, true)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                precision_undefined,
                recall_undefined,
                f1_undefined,
            }
        })
        .collect();

    let kf = k as f64;
    let macro_avg = Aggregate {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / kf,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / kf,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / kf,
        support: total,
    };
    let weighted =
        |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
    let weighted_avg = Aggregate {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
        support: total,
    };
    Ok(EvalReport {
        confusion: confusion.clone(),
        per_class,
        accuracy: confusion.trace() as f64 / total as f64,
        macro_avg,
        weighted_avg,
    })
}

impl EvalReport {
    /// `class,precision,recall,f1,support`, one row per class followed by
    /// `macro avg` and `weighted avg`.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        check_names(class_names, self.per_class.len())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "precision", "recall", "f1", "support"])?;
        let fmt = |v: f64| format!("{v:.6}");
        for (name, m) in class_names.iter().zip(&self.per_class) {
            w.write_record([
                name.clone(),
                fmt(m.precision),
                fmt(m.recall),
                fmt(m.f1),
                m.support.to_string(),
            ])?;
        }
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            w.write_record([
                name.to_string(),
                fmt(a.precision),
                fmt(a.recall),
                fmt(a.f1),
                a.support.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// Indices of classes with any zero-denominator metric.
    pub fn undefined_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, m)| m.precision_undefined || m.recall_undefined || m.f1_undefined)
            .map(|(i, _)| i)
            .collect()
    }
}
