use serde::{Deserialize, Serialize};

use crate::scalar::MetricScalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    #[error("predictions ({predictions}) and golds ({golds}) differ in length")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("value {value} at index {index} is not a binary label")]
    OutOfRange { index: usize, value: u8 },
}

/// Binary confusion counts with label 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    /// The same counts with the negative class treated as positive.
    pub fn flipped(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Swapping predictions and golds turns false positives into false
    /// negatives and back.
    pub fn transposed(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn score(predictions: &[u8], golds: &[u8]) -> Result<ConfusionMatrix, ScoreError> {
    if predictions.len() != golds.len() {
        return Err(ScoreError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&p, &g)) in predictions.iter().zip(golds).enumerate() {
        for value in [p, g] {
            if value > 1 {
                return Err(ScoreError::OutOfRange { index, value });
            }
        }
        match (p, g) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Scores of the positive class only.
    #[default]
    Binary,
    /// Unweighted mean of the per-class scores of both classes.
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
    pub support: u64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio<S: MetricScalar>(num: u64, den: u64) -> (S, bool) {
    if den == 0 {
        (S::zero(), true)
    } else {
        (S::from_count(num) / S::from_count(den), false)
    }
}

pub fn harmonic<S: MetricScalar>(p: S, r: S) -> (S, bool) {
    let den = p + r;
    if den == S::zero() {
        (S::zero(), true)
    } else {
        (S::two() * p * r / den, false)
    }
}

pub fn metrics<S: MetricScalar>(cm: &ConfusionMatrix) -> TaskMetrics<S> {
    let (precision, dp) = ratio::<S>(cm.tp, cm.tp + cm.fp);
    let (recall, dr) = ratio::<S>(cm.tp, cm.tp + cm.fn_);
    let (f1, df) = harmonic(precision, recall);
    TaskMetrics {
        precision,
        recall,
        f1,
        support: cm.support(),
        degenerate: dp || dr || df,
    }
}

pub fn metrics_with<S: MetricScalar>(cm: &ConfusionMatrix, averaging: Averaging) -> TaskMetrics<S> {
    match averaging {
        Averaging::Binary => metrics(cm),
        Averaging::Macro => {
            let pos = metrics::<S>(cm);
            let neg = metrics::<S>(&cm.flipped());
            let half = S::half();
            TaskMetrics {
                precision: (pos.precision + neg.precision) * half,
                recall: (pos.recall + neg.recall) * half,
                f1: (pos.f1 + neg.f1) * half,
                support: pos.support,
                degenerate: pos.degenerate || neg.degenerate,
            }
        }
    }
}

impl<S: MetricScalar> TaskMetrics<S> {
    pub fn to_f64(&self) -> TaskMetrics<f64> {
        TaskMetrics {
            precision: self.precision.to_f64(),
            recall: self.recall.to_f64(),
            f1: self.f1.to_f64(),
            support: self.support,
            degenerate: self.degenerate,
        }
    }
}
