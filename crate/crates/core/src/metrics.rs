//! Confusion matrices and macro-averaged classification metrics.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// `n x n` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n * n {
            return Err(Error::TensorLength {
                expected: n * n,
                found: counts.len(),
            });
        }
        Ok(Self { n, counts })
    }

    pub fn classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.n).filter(|&t| t != class).map(|t| self.get(t, class)).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.n).filter(|&p| p != class).map(|p| self.get(class, p)).sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total() - self.true_positives(class) - self.false_positives(class) - self.false_negatives(class)
    }

    /// CSV with a header row of class labels; each row starts with its true label.
    pub fn to_csv(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "{} labels for a {}-class matrix",
                labels.len(),
                self.n
            )));
        }
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("label");
        for l in labels {
            out.push(',');
            out.push_str(&quote(l));
        }
        out.push('\n');
        for (t, l) in labels.iter().enumerate() {
            out.push_str(&quote(l));
            for p in 0..self.n {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Tallies `(label, prediction)` pairs into an `n`-class matrix.
pub fn confusion_matrix(labels: &[usize], preds: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if labels.len() != preds.len() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    let mut counts = vec![0u64; n * n];
    for (&t, &p) in labels.iter().zip(preds) {
        if let Some(index) = [t, p].into_iter().find(|&i| i >= n) {
            return Err(Error::ClassOutOfRange { index, classes: n });
        }
        counts[t * n + p] += 1;
    }
    ConfusionMatrix::from_counts(n, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationMetrics {
    /// JSON object with 4 decimals per value.
    pub fn to_json(&self) -> String {
        format!(
            "{{\n  \"accuracy\": {:.4},\n  \"precision\": {:.4},\n  \"recall\": {:.4},\n  \"f1\": {:.4}\n}}\n",
            self.accuracy, self.precision, self.recall, self.f1
        )
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (one-vs-rest).
pub fn per_class(cm: &ConfusionMatrix) -> Vec<(f64, f64, f64)> {
    (0..cm.n)
        .map(|c| {
            let tp = cm.true_positives(c);
            let p = ratio(tp, tp + cm.false_positives(c));
            let r = ratio(tp, tp + cm.false_negatives(c));
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f1)
        })
        .collect()
}

/// Accuracy as trace over total; precision, recall and F1 macro-averaged.
/// Undefined ratios count as 0.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 || cm.n == 0 {
        return Err(Error::EmptyConfusion);
    }
    let rows = per_class(cm);
    let n = cm.n as f64;
    Ok(ClassificationMetrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: rows.iter().map(|r| r.0).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.1).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.2).sum::<f64>() / n,
    })
}
