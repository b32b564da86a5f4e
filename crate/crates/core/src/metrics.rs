//! Scoring of fused or individual predictions against ground truth.

use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::voting::Fusion;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} ground-truth samples")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no samples to score")]
    EmptyInput,
}

/// Fraction of correctly predicted samples, kept as an exact ratio.
///
/// Comparison is by value (`1/2 == 2/4`), so rankings never depend on float
/// rounding. `Display` renders four decimals, rounding half to even.
#[derive(Debug, Clone, Copy)]
pub struct Accuracy {
    correct: u64,
    total: u64,
}

impl Accuracy {
    pub fn new(correct: u64, total: u64) -> Self {
        assert!(
            total > 0 && correct <= total,
            "invalid accuracy {correct}/{total}"
        );
        Self { correct, total }
    }

    pub fn correct(self) -> u64 {
        self.correct
    }

    pub fn total(self) -> u64 {
        self.total
    }

    pub fn value(self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Decimal rendering with `places` digits after the point, ties to even.
    pub fn to_fixed(self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let scaled = self.correct as u128 * scale;
        let total = self.total as u128;
        let (mut q, r) = (scaled / total, scaled % total);
        match (2 * r).cmp(&total) {
            Ordering::Greater => q += 1,
            Ordering::Equal if q % 2 == 1 => q += 1,
            _ => {}
        }
        if places == 0 {
            return q.to_string();
        }
        format!(
            "{}.{:0width$}",
            q / scale,
            q % scale,
            width = places as usize
        )
    }
}

impl PartialEq for Accuracy {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Accuracy {}

impl PartialOrd for Accuracy {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Accuracy {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.correct as u128 * other.total as u128)
            .cmp(&(other.correct as u128 * self.total as u128))
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fixed(4))
    }
}

impl Serialize for Accuracy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serde_json::value::RawValue::from_string(self.to_string())
            .map_err(serde::ser::Error::custom)?
            .serialize(serializer)
    }
}

fn check_lengths(pred: usize, truth: usize) -> Result<(), MetricsError> {
    if pred != truth {
        return Err(MetricsError::LengthMismatch {
            predictions: pred,
            truth,
        });
    }
    if truth == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Matches over total; an abstention (`None`) never matches.
pub fn accuracy(pred: &[Option<usize>], truth: &[usize]) -> Result<Accuracy, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    let correct = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p == Some(**t))
        .count();
    Ok(Accuracy::new(correct as u64, truth.len() as u64))
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
    /// Abstentions per true class; present only when any occurred.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abstained: Option<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        let predicted: u64 = self.counts.iter().flatten().sum();
        predicted + self.abstained.iter().flatten().sum::<u64>()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(
    pred: &[Option<usize>],
    truth: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    check_lengths(pred.len(), truth.len())?;
    let mut counts = vec![vec![0u64; classes]; classes];
    let mut abstained = vec![0u64; classes];
    for (p, &t) in pred.iter().zip(truth) {
        match p {
            Some(p) => counts[t][*p] += 1,
            None => abstained[t] += 1,
        }
    }
    let abstained = abstained.iter().any(|&a| a > 0).then_some(abstained);
    Ok(ConfusionMatrix {
        classes,
        counts,
        abstained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per class. Any 0/0 is reported as 0.
pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = cm.counts.iter().map(|row| row[c]).sum();
            let actual: u64 =
                cm.counts[c].iter().sum::<u64>() + cm.abstained.as_ref().map_or(0, |a| a[c]);
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsBundle {
    pub accuracy: Accuracy,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub ties: usize,
    pub abstentions: usize,
}

pub fn evaluate(
    fusion: &Fusion,
    truth: &[usize],
    classes: usize,
) -> Result<MetricsBundle, MetricsError> {
    let confusion = confusion(&fusion.labels, truth, classes)?;
    Ok(MetricsBundle {
        accuracy: Accuracy::new(confusion.trace(), truth.len() as u64),
        per_class: per_class(&confusion),
        confusion,
        ties: fusion.ties,
        abstentions: fusion.abstentions(),
    })
}
