//! Inference for inputs where most features sit at one canonical "absent"
//! value. The basis net runs once at that value; each row then only pays for
//! its present features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::basis::{dedup_rows, dot};
use crate::models::nbm::NbmParams;
use crate::nn::Mode;

pub const DEFAULT_ABSENT_VALUE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Data(format!(
                "sparse row has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("sparse row indices must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("sparse row holds non-finite value {v}")));
        }
        Ok(Self { indices, values })
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn check_width(&self, d: usize) -> Result<()> {
        match self.indices.last() {
            Some(&i) if i >= d => Err(Error::Data(format!(
                "feature index {i} out of range for {d} features"
            ))),
            _ => Ok(()),
        }
    }

    /// Dense row with absent entries set to `absent`.
    pub fn densify_into(&self, absent: f64, out: &mut [f64]) {
        out.fill(absent);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
    }
}

pub fn densify(rows: &[SparseRow], d: usize, absent: f64) -> Result<Matrix> {
    let mut m = Matrix::zeros(rows.len(), d);
    for (r, row) in rows.iter().enumerate() {
        row.check_width(d)?;
        row.densify_into(absent, m.row_mut(r));
    }
    Ok(m)
}

/// Precomputed absent-value terms for one parameter state.
#[derive(Debug, Clone)]
pub struct SparseNbm<'a> {
    params: &'a NbmParams,
    absent: f64,
    /// `f_i(v₀)` per feature.
    absent_shapes: Vec<f64>,
    /// `f0 + h(v₀)·AᵀW`, the logits of an all-absent row.
    base: Vec<f64>,
}

impl<'a> SparseNbm<'a> {
    pub fn new(params: &'a NbmParams, absent: f64) -> Result<Self> {
        let h0 = params.unary.evaluate_bases(&Matrix::column(&[absent]))?;
        let h0 = h0.row(0);
        let d = params.num_features();
        let c = params.num_outputs();
        // Column sums Σ_i a_ik·w_il: total projection, `(S·B) × C`.
        let total = params.unary.projection.t_matmul(&params.class_weights)?;
        let mut base = params.bias.clone();
        for (k, &h) in h0.iter().enumerate() {
            for l in 0..c {
                base[l] += h * total.get(k, l);
            }
        }
        let absent_shapes = (0..d)
            .map(|i| dot(h0, params.unary.projection.row(i)))
            .collect();
        Ok(Self {
            params,
            absent,
            absent_shapes,
            base,
        })
    }

    pub fn absent_value(&self) -> f64 {
        self.absent
    }

    pub fn forward(&self, rows: &[SparseRow]) -> Result<Matrix> {
        let d = self.params.num_features();
        let c = self.params.num_outputs();
        let mut values = Vec::new();
        for row in rows {
            row.check_width(d)?;
            values.extend_from_slice(&row.values);
        }
        let (unique, index) = dedup_rows(&Matrix::column(&values));
        let bases = self.params.unary.evaluate_bases(&unique)?;
        bases.ensure_finite("sparse basis outputs")?;
        let proj = &self.params.unary.projection;
        let w = &self.params.class_weights;
        let mut logits = Matrix::zeros(rows.len(), c);
        let mut pos = 0;
        for (r, row) in rows.iter().enumerate() {
            let out = logits.row_mut(r);
            out.copy_from_slice(&self.base);
            for &i in &row.indices {
                let h = bases.row(index[pos] as usize);
                let delta = dot(h, proj.row(i)) - self.absent_shapes[i];
                out.iter_mut()
                    .zip(w.row(i))
                    .for_each(|(o, w)| *o += delta * w);
                pos += 1;
            }
        }
        Ok(logits)
    }
}

/// One-shot sparse NBM inference. Only eval mode is supported.
pub fn nbm_sparse_forward(rows: &[SparseRow], params: &NbmParams, mode: Mode) -> Result<Matrix> {
    if mode != Mode::Eval {
        return Err(Error::Contract("the sparse path is inference-only".into()));
    }
    SparseNbm::new(params, DEFAULT_ABSENT_VALUE)?.forward(rows)
}
