//! Dataset ingestion, preprocessing and splitting.

pub mod scale;
pub mod sparse;
pub mod synth;
pub mod table;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use scale::{MinMax, QuantileGaussian, Scaling};
pub use sparse::{load_sparse, parse_sparse, SparseDataset};
pub use table::{load_csv, write_csv, ColumnRole, RawTable, Schema};

/// Dense features, raw targets and feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim("dataset targets", x.rows(), y.len()));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::dim("dataset feature names", x.cols(), feature_names.len()));
        }
        Ok(Self {
            x,
            y,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn samples(&self) -> crate::optim::Samples<'_> {
        crate::optim::Samples {
            x: &self.x,
            y: &self.y,
        }
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Part sizes for `n` items by largest remainder: floors first, then the
/// leftover items go to the largest fractional parts (earliest part on ties).
pub fn split_sizes(n: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Seeded shuffle of `0..n` followed by contiguous cuts.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 3 {
        return Err(Error::Data(format!("cannot split {n} rows three ways")));
    }
    let sizes = split_sizes(n, &ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::seeded_rng(seed));
    let b = idx.split_off(sizes[0]);
    let (val, test) = b.split_at(sizes[1]);
    Ok([idx, val.to_vec(), test.to_vec()])
}

pub fn split(data: &Dataset, ratios: [f64; 3], seed: u64) -> Result<[Dataset; 3]> {
    let [a, b, c] = split_indices(data.len(), ratios, seed)?;
    Ok([data.select(&a), data.select(&b), data.select(&c)])
}
