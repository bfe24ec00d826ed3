//! Synthetic datasets with known additive ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SparseDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::sparse::{SparseRow, DEFAULT_ABSENT_VALUE};
use crate::models::Task;

/// A univariate (or, for `Product`, bivariate) shape on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// `sin(2πx)`
    Sin,
    /// `x²`
    Quadratic,
    /// `1[x > threshold]`
    Step { threshold: f64 },
    /// `slope · x`
    Linear { slope: f64 },
    /// `x_a · x_b`
    Product,
}

impl Shape {
    pub fn arity(&self) -> usize {
        match self {
            Shape::Product => 2,
            _ => 1,
        }
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        match *self {
            Shape::Sin => (2.0 * std::f64::consts::PI * v[0]).sin(),
            Shape::Quadratic => v[0] * v[0],
            Shape::Step { threshold } => f64::from(u8::from(v[0] > threshold)),
            Shape::Linear { slope } => slope * v[0],
            Shape::Product => v[0] * v[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub features: Vec<usize>,
    #[serde(flatten)]
    pub shape: Shape,
}

/// `intercept + Σ_terms shape(x[features])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intercept: f64,
    pub terms: Vec<Term>,
}

impl GroundTruth {
    pub fn linear(weights: &[f64], intercept: f64) -> Self {
        Self {
            intercept,
            terms: weights
                .iter()
                .enumerate()
                .map(|(i, &slope)| Term {
                    features: vec![i],
                    shape: Shape::Linear { slope },
                })
                .collect(),
        }
    }

    /// `sin(2πx₀) + x₁²`
    pub fn sin_quadratic() -> Self {
        Self {
            intercept: 0.0,
            terms: vec![
                Term {
                    features: vec![0],
                    shape: Shape::Sin,
                },
                Term {
                    features: vec![1],
                    shape: Shape::Quadratic,
                },
            ],
        }
    }

    /// Cycles sin, quadratic, step and linear over the features and adds one
    /// product term per consecutive feature pair among the first `pairs`.
    pub fn mixed(d: usize, pairs: usize) -> Self {
        let mut terms: Vec<Term> = (0..d)
            .map(|i| Term {
                features: vec![i],
                shape: match i % 4 {
                    0 => Shape::Sin,
                    1 => Shape::Quadratic,
                    2 => Shape::Step { threshold: 0.5 },
                    _ => Shape::Linear { slope: -1.0 },
                },
            })
            .collect();
        for p in 0..pairs.min(d / 2) {
            terms.push(Term {
                features: vec![2 * p, 2 * p + 1],
                shape: Shape::Product,
            });
        }
        Self {
            intercept: 0.0,
            terms,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for t in &self.terms {
            if t.features.len() != t.shape.arity() {
                return Err(Error::Config(format!(
                    "{:?} takes {} feature(s), got {}",
                    t.shape,
                    t.shape.arity(),
                    t.features.len()
                )));
            }
            if let Some(&f) = t.features.iter().find(|&&f| f >= d) {
                return Err(Error::Config(format!("ground-truth feature {f} out of range for D = {d}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; 2];
        self.intercept
            + self
                .terms
                .iter()
                .map(|t| {
                    for (b, &f) in buf.iter_mut().zip(&t.features) {
                        *b = x[f];
                    }
                    t.shape.eval(&buf[..t.features.len()])
                })
                .sum::<f64>()
    }

    /// The univariate terms acting on feature `i`, summed.
    pub fn univariate(&self, i: usize, v: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.features == [i])
            .map(|t| t.shape.eval(&[v]))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_features: usize,
    pub num_rows: usize,
    pub task: Task,
    /// Standard deviation of additive Gaussian noise on the ground truth.
    pub noise: f64,
    /// Probability that a feature is absent from a row; `> 0` yields a
    /// sparse dataset.
    pub sparsity: f64,
    pub seed: u64,
    pub truth: GroundTruth,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.num_rows == 0 {
            return Err(Error::Config("synthetic data needs D ≥ 1 and n ≥ 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise {} must be finite and ≥ 0", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity {} must lie in [0, 1]", self.sparsity)));
        }
        if let Task::Multiclass { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config("multiclass needs at least 2 classes".into()));
            }
        }
        self.truth.validate(self.num_features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synth {
    Dense(Dataset),
    Sparse(SparseDataset),
}

/// Turns noisy scores into targets: regression keeps them, classification
/// cuts them at empirical quantiles into equally populated classes.
fn labels(task: Task, scores: Vec<f64>) -> Vec<f64> {
    let classes = match task {
        Task::Regression => return scores,
        Task::Binary => 2,
        Task::Multiclass { classes } => classes,
    };
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..classes)
        .map(|k| sorted[(k * sorted.len() / classes).min(sorted.len() - 1)])
        .collect();
    scores
        .iter()
        .map(|s| cuts.iter().filter(|&&c| *s >= c).count() as f64)
        .collect()
}

pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// Draws `x ~ U[0,1]^D` (each feature present with probability
/// `1 − sparsity`, absent ones at 0) and targets from the ground truth
/// plus Gaussian noise.
pub fn generate(spec: &SynthSpec) -> Result<Synth> {
    spec.validate()?;
    let mut rng = crate::seeded_rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let (n, d) = (spec.num_rows, spec.num_features);
    let mut scores = Vec::with_capacity(n);
    if spec.sparsity == 0.0 {
        let mut x = Matrix::zeros(n, d);
        for r in 0..n {
            let row = x.row_mut(r);
            row.iter_mut().for_each(|v| *v = rng.gen::<f64>());
            scores.push(spec.truth.eval(row) + noise.sample(&mut rng));
        }
        let y = labels(spec.task, scores);
        return Dataset::new(x, y, feature_names(d)).map(Synth::Dense);
    }
    let density = 1.0 - spec.sparsity;
    let mut rows = Vec::with_capacity(n);
    let mut dense = vec![DEFAULT_ABSENT_VALUE; d];
    for _ in 0..n {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..d {
            if rng.gen::<f64>() < density {
                indices.push(i);
                values.push(rng.gen::<f64>());
            }
        }
        for (&i, &v) in indices.iter().zip(&values) {
            dense[i] = v;
        }
        scores.push(spec.truth.eval(&dense) + noise.sample(&mut rng));
        for &i in &indices {
            dense[i] = DEFAULT_ABSENT_VALUE;
        }
        rows.push(SparseRow { indices, values });
    }
    Ok(Synth::Sparse(SparseDataset {
        rows,
        y: labels(spec.task, scores),
        num_features: d,
        absent: DEFAULT_ABSENT_VALUE,
    }))
}

/// Distinct-value counts of the ten numeric forest-cover columns.
pub const COVERTYPE_CARDINALITIES: [usize; 10] = [1978, 361, 67, 551, 700, 5785, 207, 185, 255, 5827];
pub const COVERTYPE_CLASSES: usize = 7;
pub const COVERTYPE_FEATURES: usize = 54;

/// Forest-cover-shaped multi-class data: ten numeric columns quantized to
/// their real cardinalities on `[0, 1]`, a 4-way and a 40-way one-hot block,
/// and seven classes from a random additive score.
pub fn covertype_like(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("covertype_like needs n ≥ 1".into()));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut x = Matrix::zeros(n, COVERTYPE_FEATURES);
    let effects: Vec<[f64; COVERTYPE_CLASSES]> = (0..COVERTYPE_FEATURES)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row_mut(r);
        for (c, &card) in COVERTYPE_CARDINALITIES.iter().enumerate() {
            row[c] = rng.gen_range(0..card) as f64 / (card - 1) as f64;
        }
        row[10 + rng.gen_range(0..4)] = 1.0;
        row[14 + rng.gen_range(0..40)] = 1.0;
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..COVERTYPE_CLASSES {
            let s: f64 = row.iter().zip(&effects).map(|(v, e)| v * e[k]).sum::<f64>()
                + rng.gen_range(-0.5..0.5);
            if s > best.1 {
                best = (k, s);
            }
        }
        y.push(best.0 as f64);
    }
    let mut names: Vec<String> = (0..10).map(|i| format!("num{i}")).collect();
    names.extend((0..4).map(|i| format!("area={i}")));
    names.extend((0..40).map(|i| format!("soil={i}")));
    Dataset::new(x, y, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_evaluate() {
        assert!(Shape::Sin.eval(&[0.25]) - 1.0 < 1e-15);
        assert_eq!(Shape::Quadratic.eval(&[0.5]), 0.25);
        assert_eq!(Shape::Step { threshold: 0.5 }.eval(&[0.5]), 0.0);
        assert_eq!(Shape::Product.eval(&[2.0, 3.0]), 6.0);
        let g = GroundTruth::mixed(4, 1);
        assert_eq!(g.terms.len(), 5);
        assert!(g.validate(3).is_err());
    }

    #[test]
    fn labels_are_balanced_classes() {
        let y = labels(Task::Multiclass { classes: 4 }, (0..100).map(f64::from).collect());
        for k in 0..4 {
            assert_eq!(y.iter().filter(|&&v| v == k as f64).count(), 25);
        }
    }
}
