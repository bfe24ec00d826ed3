//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::Task;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim("metric inputs", a, b));
    }
    if a == 0 {
        return Err(Error::UndefinedMetric("metric over an empty set".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), target.len())?;
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(ss / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

/// Area under the ROC curve via the Mann–Whitney U statistic, with tied
/// scores sharing their average rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes present".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("AUROC score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label. A single-column logit
/// matrix is read as a binary score thresholded at zero.
pub fn accuracy_at_1(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_lengths(logits.rows(), labels.len())?;
    let mut hits = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let pred = if logits.cols() == 1 {
            usize::from(logits.get(r, 0) > 0.0)
        } else {
            argmax(logits.row(r))
        };
        if pred == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

pub fn error_rate(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    accuracy_at_1(logits, labels).map(|a| 1.0 - a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
    pub higher_is_better: bool,
}

impl Metric {
    pub fn better_than(&self, other: f64) -> bool {
        if self.higher_is_better {
            self.value > other
        } else {
            self.value < other
        }
    }

    pub fn worst(task: Task) -> f64 {
        if Metric::higher_is_better_for(task) {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }

    pub fn higher_is_better_for(task: Task) -> bool {
        task.is_classification()
    }
}

pub(crate) fn labels_of(y: &[f64]) -> Result<Vec<usize>> {
    y.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Data(format!("class label {v} is not a non-negative integer")))
            }
        })
        .collect()
}

/// The headline metric for a task: RMSE for regression, AUROC for binary,
/// accuracy@1 for multi-class.
pub fn evaluate(task: Task, logits: &Matrix, y: &[f64]) -> Result<Metric> {
    Ok(match task {
        Task::Regression => Metric {
            name: "rmse",
            value: rmse(logits.data(), y)?,
            higher_is_better: false,
        },
        Task::Binary => {
            let labels: Vec<bool> = labels_of(y)?.into_iter().map(|l| l == 1).collect();
            Metric {
                name: "auroc",
                value: auroc(logits.data(), &labels)?,
                higher_is_better: true,
            }
        }
        Task::Multiclass { .. } => Metric {
            name: "accuracy",
            value: accuracy_at_1(logits, &labels_of(y)?)?,
            higher_is_better: true,
        },
    })
}
