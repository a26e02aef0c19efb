//! Binary classification metrics with malignant (label 1) as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSITIVE: usize = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == POSITIVE, y == POSITIVE) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Percent-scale metrics. A zero denominator yields 0 and sets the matching flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (acc, _) = ratio(c.tp + c.tn, c.total());
        let (p, p_undef) = ratio(c.tp, c.tp + c.fp);
        let (r, r_undef) = ratio(c.tp, c.tp + c.fn_);
        let (f1, f1_undef) = if p + r > 0.0 { (2.0 * p * r / (p + r), false) } else { (0.0, true) };
        Self {
            acc: 100.0 * acc,
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
            precision_undefined: p_undef,
            recall_undefined: r_undef,
            f1_undefined: f1_undef,
        }
    }

    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        Ok(Self::from_confusion(&Confusion::from_predictions(predictions, labels)?))
    }

    pub fn values(&self) -> [f64; 4] {
        [self.acc, self.precision, self.recall, self.f1]
    }
}

pub const METRIC_NAMES: [&str; 4] = ["acc", "precision", "recall", "f1"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation. Empty input gives `None`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }

    /// Table cell such as `82.08_{±1.14}`.
    pub fn cell(&self) -> String {
        format!("{:.2}_{{±{:.2}}}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub runs: usize,
}

impl Aggregate {
    pub fn of(runs: &[Metrics]) -> Option<Self> {
        let col = |i: usize| runs.iter().map(|m| m.values()[i]).collect::<Vec<_>>();
        Some(Self {
            acc: MeanStd::of(&col(0))?,
            precision: MeanStd::of(&col(1))?,
            recall: MeanStd::of(&col(2))?,
            f1: MeanStd::of(&col(3))?,
            runs: runs.len(),
        })
    }

    pub fn cells(&self) -> [MeanStd; 4] {
        [self.acc, self.precision, self.recall, self.f1]
    }

    pub fn row(&self) -> String {
        self.cells().iter().map(MeanStd::cell).collect::<Vec<_>>().join(" | ")
    }
}
