use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-column `(x − min)/(max − min)` fitted on training data. Constant
/// columns map to 0; values outside the training range are not clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("cannot fit min-max scaling on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; x.cols()];
        let mut max = vec![f64::NEG_INFINITY; x.cols()];
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::dim("min-max columns", self.min.len(), x.cols()));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            let range = self.max[c] - self.min[c];
            if range > 0.0 {
                (x.get(r, c) - self.min[c]) / range
            } else {
                0.0
            }
        }))
    }

    /// Undoes [`MinMax::apply`]; constant columns come back as their value.
    pub fn inverse(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::dim("min-max columns", self.min.len(), x.cols()));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            self.min[c] + x.get(r, c) * (self.max[c] - self.min[c])
        }))
    }
}

pub const DEFAULT_QUANTILE_BINS: usize = 2000;
const P_CLIP: f64 = 1e-7;

/// Empirical CDF on quantile knots, composed with the standard normal
/// inverse CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGaussian {
    /// Knot values per column, ascending.
    pub quantiles: Vec<Vec<f64>>,
    /// Cumulative probabilities shared by every column's knots.
    pub references: Vec<f64>,
}

/// Percentile with linear interpolation between order statistics.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Piecewise-linear interpolation; `xp` ascending, clamped at both ends.
/// Within a run of equal knots the last one wins.
fn interp(x: f64, xp: &[f64], fp: &[f64]) -> f64 {
    let last = xp.len() - 1;
    if x <= xp[0] {
        return fp[0];
    }
    if x >= xp[last] {
        return fp[last];
    }
    let j = xp.partition_point(|&v| v <= x) - 1;
    let t = (x - xp[j]) / (xp[j + 1] - xp[j]);
    fp[j] + t * (fp[j + 1] - fp[j])
}

/// Like [`interp`] but within a run of equal knots the first one wins.
fn interp_first(x: f64, xp: &[f64], fp: &[f64]) -> f64 {
    let last = xp.len() - 1;
    if x <= xp[0] {
        return fp[0];
    }
    let j = xp.partition_point(|&v| v < x);
    if j > last {
        return fp[last];
    }
    if xp[j] == x {
        return fp[j];
    }
    let t = (x - xp[j - 1]) / (xp[j] - xp[j - 1]);
    fp[j - 1] + t * (fp[j] - fp[j - 1])
}

impl QuantileGaussian {
    pub fn fit(x: &Matrix, bins: usize) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("cannot fit a quantile map on zero rows".into()));
        }
        let k = bins.min(x.rows()).max(2);
        let references: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        let quantiles = (0..x.cols())
            .map(|c| {
                let mut col = x.col(c);
                col.sort_by(f64::total_cmp);
                let mut q: Vec<f64> = references.iter().map(|&p| percentile(&col, p)).collect();
                // Interpolation rounding must not break monotonicity.
                for i in 1..q.len() {
                    if q[i] < q[i - 1] {
                        q[i] = q[i - 1];
                    }
                }
                q
            })
            .collect();
        Ok(Self {
            quantiles,
            references,
        })
    }

    /// Empirical CDF value of `v` in column `c`. Ties between knots resolve
    /// to the middle of their probability range.
    pub fn cdf(&self, c: usize, v: f64) -> f64 {
        let q = &self.quantiles[c];
        let r = &self.references;
        0.5 * (interp(v, q, r) + interp_first(v, q, r))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.quantiles.len() {
            return Err(Error::dim("quantile map columns", self.quantiles.len(), x.cols()));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for c in 0..x.cols() {
            let q = &self.quantiles[c];
            let (lo, hi) = (q[0], q[q.len() - 1]);
            for r in 0..x.rows() {
                let v = x.get(r, c).clamp(lo, hi);
                let p = self.cdf(c, v).clamp(P_CLIP, 1.0 - P_CLIP);
                out.set(r, c, normal.inverse_cdf(p));
            }
        }
        Ok(out)
    }
}

/// Feature scaling recorded alongside a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scaling {
    None,
    MinMax(MinMax),
    Quantile(QuantileGaussian),
}

impl Scaling {
    pub fn fit(kind: &str, train: &Matrix) -> Result<Self> {
        match kind {
            "none" => Ok(Scaling::None),
            "minmax" => MinMax::fit(train).map(Scaling::MinMax),
            "quantile" => QuantileGaussian::fit(train, DEFAULT_QUANTILE_BINS).map(Scaling::Quantile),
            other => Err(Error::Config(format!(
                "unknown scaling '{other}' (expected none, minmax or quantile)"
            ))),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Scaling::None => Ok(x.clone()),
            Scaling::MinMax(m) => m.apply(x),
            Scaling::Quantile(q) => q.apply(x),
        }
    }
}
