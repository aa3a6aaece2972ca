//! Confusion matrices and macro-averaged classification metrics.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ids_data::LabelMap;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("class index {0} outside the label map")]
    UnknownClass(usize),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: LabelMap,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k() + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        let k = self.k();
        &self.counts[truth * k..(truth + 1) * k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k()).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.get(i, i)).sum()
    }

    /// Tab-separated counts with a header row of predicted class names.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in self.labels.classes() {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (t, name) in self.labels.classes().iter().enumerate() {
            out.push_str(name);
            for v in self.row(t) {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(
    y_true: &[usize],
    y_pred: &[usize],
    labels: &LabelMap,
) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let k = labels.len();
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k {
            return Err(EvalError::UnknownClass(t));
        }
        if p >= k {
            return Err(EvalError::UnknownClass(p));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.clone(),
        counts,
    })
}

/// Row-normalized confusion matrix. Rows of absent classes stay zero and
/// are listed in `empty_rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    pub labels: LabelMap,
    pub rows: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

impl NormalizedMatrix {
    /// Plain-text grid, one row per true class, 4 decimals.
    pub fn to_grid(&self) -> String {
        let width = self.labels.classes().iter().map(|c| c.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, row) in self.labels.classes().iter().zip(&self.rows) {
            let _ = write!(out, "{name:>width$} |");
            for v in row {
                let _ = write!(out, " {v:.4}");
            }
            out.push('\n');
        }
        out
    }

    /// Tab-separated values with class-name headers, for external plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in self.labels.classes() {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (name, row) in self.labels.classes().iter().zip(&self.rows) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn normalize(m: &ConfusionMatrix) -> NormalizedMatrix {
    let mut empty_rows = Vec::new();
    let rows = (0..m.k())
        .map(|t| {
            let sum = m.row_sum(t);
            if sum == 0 {
                empty_rows.push(t);
                vec![0.0; m.k()]
            } else {
                m.row(t).iter().map(|&c| c as f64 / sum as f64).collect()
            }
        })
        .collect();
    NormalizedMatrix {
        labels: m.labels.clone(),
        rows,
        empty_rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was predicted as this class.
    pub precision_undefined: bool,
    /// The class has no true samples.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub labels: LabelMap,
    pub total: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(m: &ConfusionMatrix) -> MetricsReport {
    let k = m.k();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = m.get(c, c);
            let (precision, precision_undefined) = ratio(tp, m.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, m.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / k as f64
        }
    };
    MetricsReport {
        labels: m.labels.clone(),
        total: m.total(),
        accuracy: ratio(m.trace(), m.total()).0,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    }
}

/// Key names in the report use the class name with spaces replaced by `_`.
pub fn class_key(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

impl MetricsReport {
    /// `key = value` lines, values rounded to 4 decimals. Per-class keys are
    /// `precision.<class>`, `recall.<class>`, `f1.<class>`; an undefined
    /// value is followed by ` undefined`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples = {}", self.total);
        let _ = writeln!(out, "accuracy = {:.4}", self.accuracy);
        let _ = writeln!(out, "macro_precision = {:.4}", self.macro_precision);
        let _ = writeln!(out, "macro_recall = {:.4}", self.macro_recall);
        let _ = writeln!(out, "macro_f1 = {:.4}", self.macro_f1);
        for (name, c) in self.labels.classes().iter().zip(&self.per_class) {
            let key = class_key(name);
            let flag = |u: bool| if u { " undefined" } else { "" };
            let _ = writeln!(out, "precision.{key} = {:.4}{}", c.precision, flag(c.precision_undefined));
            let _ = writeln!(out, "recall.{key} = {:.4}{}", c.recall, flag(c.recall_undefined));
            let _ = writeln!(
                out,
                "f1.{key} = {:.4}{}",
                c.f1,
                flag(c.precision_undefined || c.recall_undefined)
            );
        }
        out
    }
}

/// Parses the `key = value` report format back into pairs, ignoring any
/// trailing ` undefined` marker.
pub fn parse_report(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(" = ")?;
            let v = v.split(' ').next()?.parse().ok()?;
            Some((k.to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests;
