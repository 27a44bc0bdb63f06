//! Multiclass evaluation: confusion matrix, per-class precision/recall/F1,
//! macro-F1, accuracy, and the control-vs-pathogenic binary collapse.
//!
//! Labels are 1-based (`1..=K`). Rows of the confusion matrix are true
//! classes, columns predicted classes. Any `0/0` ratio evaluates to 0, and the
//! macro average runs over all `K` classes, absent ones included.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label streams differ in length ({truth} true vs {predicted} predicted)")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} outside 1..={num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("number of classes must be positive")]
    NoClasses,
    #[error("accuracy is undefined for an empty evaluation")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Result<Self, MetricsError> {
        if num_classes == 0 {
            return Err(MetricsError::NoClasses);
        }
        Ok(ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] })
    }

    /// Builds from a row-major `K×K` table of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let k = rows.len();
        let mut cm = Self::zeros(k)?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(MetricsError::LengthMismatch { truth: k, predicted: row.len() });
            }
            cm.counts[t * k..(t + 1) * k].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Count for 1-based `(true, predicted)`.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[(truth - 1) * self.num_classes + (predicted - 1)]
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        let k = self.num_classes;
        for label in [truth, predicted] {
            if label == 0 || label > k {
                return Err(MetricsError::LabelOutOfRange { label, num_classes: k });
            }
        }
        self.counts[(truth - 1) * k + (predicted - 1)] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (1..=self.num_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (1..=self.num_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (1..=self.num_classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes).map(<[u64]>::to_vec).collect()
    }
}

/// Counts `(true, predicted)` pairs over two 1-based label streams.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let mut cm = ConfusionMatrix::zeros(num_classes)?;
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of 1-based class `class`.
pub fn precision_recall_f1(cm: &ConfusionMatrix, class: usize) -> ClassScores {
    let tp = cm.get(class, class);
    let fp = cm.col_sum(class) - tp;
    let fn_ = cm.row_sum(class) - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

/// `(1/K) Σ_c F1_c`.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let k = cm.num_classes();
    (1..=k).map(|c| precision_recall_f1(cm, c).f1).sum::<f64>() / k as f64
}

/// `trace / N`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

/// Collapses four-class streams to control (negative, class 1) versus any
/// pathogenic group (positive, class 2). Confusions among groups 2–4 count as
/// correct positives.
pub fn collapse_to_binary(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let collapse = |l: usize| match l {
        1 => Ok(1),
        2..=4 => Ok(2),
        _ => Err(MetricsError::LabelOutOfRange { label: l, num_classes: 4 }),
    };
    let mut cm = ConfusionMatrix::zeros(2)?;
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.record(collapse(t)?, collapse(p)?)?;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        Ok(MetricsReport {
            confusion: cm.rows(),
            per_class: (1..=cm.num_classes()).map(|c| precision_recall_f1(cm, c)).collect(),
            macro_f1: macro_f1(cm),
            accuracy: accuracy(cm)?,
        })
    }

    pub fn evaluate(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self, MetricsError> {
        Self::from_confusion(&confusion_matrix(truth, predicted, num_classes)?)
    }
}

/// Aligned plain-text rendering, six decimals.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = self.per_class.len();
        write!(f, "{:>10}", "true\\pred")?;
        for c in 1..=k {
            write!(f, " {c:>8}")?;
        }
        writeln!(f)?;
        for (t, row) in self.confusion.iter().enumerate() {
            write!(f, "{:>10}", t + 1)?;
            for v in row {
                write!(f, " {v:>8}")?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(f, "{:>6} {:>10} {:>10} {:>10}", "class", "precision", "recall", "f1")?;
        for (c, s) in self.per_class.iter().enumerate() {
            writeln!(f, "{:>6} {:>10.6} {:>10.6} {:>10.6}", c + 1, s.precision, s.recall, s.f1)?;
        }
        writeln!(f, "macro-F1 {:.6}", self.macro_f1)?;
        write!(f, "accuracy {:.6}", self.accuracy)
    }
}
