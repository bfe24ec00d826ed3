//! Shared basis networks projected onto groups (single features or feature
//! pairs). A group's shape value is `f_g(z) = Σ_k h_k(z)·a_gk`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::activation::{check_rate, dropout_mask};
use crate::nn::{Mlp, MlpCache, Mode};
use crate::tensors::{join, Role, TensorMut, TensorRef, Tensors};

/// Rows of pair inputs evaluated per basis-network call in eval mode.
pub const DEFAULT_ROW_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisBlock {
    /// `S` networks, each `arity → B`.
    pub nets: Vec<Mlp>,
    /// `groups × (S·B)`.
    pub projection: Matrix,
}

#[derive(Debug, Clone)]
pub struct BasisCache {
    nets: Vec<MlpCache>,
    /// Basis outputs after basis dropout, `(n·G) × (S·B)`.
    bases: Matrix,
    /// Basis dropout multipliers, absent when dropout is off.
    mask: Option<Vec<f64>>,
    groups: usize,
}

impl BasisBlock {
    pub fn new<R: Rng + ?Sized>(
        groups: usize,
        arity: usize,
        hidden: &[usize],
        bases: usize,
        subnets: usize,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if subnets == 0 || bases == 0 {
            return Err(Error::Config("need at least one subnet and one basis".into()));
        }
        let mut widths = vec![arity];
        widths.extend_from_slice(hidden);
        widths.push(bases);
        let nets = (0..subnets)
            .map(|_| Mlp::new(&widths, batch_norm, rng))
            .collect::<Result<Vec<_>>>()?;
        let width = subnets * bases;
        let proj = crate::nn::LinearLayer::init_output(width, groups, rng);
        Ok(Self {
            nets,
            projection: proj.weight.transpose(),
        })
    }

    pub fn groups(&self) -> usize {
        self.projection.rows()
    }

    pub fn arity(&self) -> usize {
        self.nets[0].input_width()
    }

    pub fn bases_per_net(&self) -> usize {
        self.nets[0].output_width()
    }

    pub fn width(&self) -> usize {
        self.projection.cols()
    }

    /// Concatenated basis outputs of all subnets, eval mode.
    pub fn evaluate_bases(&self, z: &Matrix) -> Result<Matrix> {
        if self.nets.len() == 1 {
            return self.nets[0].predict(z);
        }
        let outs = self
            .nets
            .iter()
            .map(|n| n.predict(z))
            .collect::<Result<Vec<_>>>()?;
        Ok(concat_cols(&outs))
    }

    /// `z` holds `n·G` rows ordered batch-major (`row = b·G + g`). Training
    /// mode keeps a cache for backward; eval mode evaluates each distinct
    /// input row once and keeps none.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        z: &Matrix,
        mode: Mode,
        hidden_dropout: f64,
        basis_dropout: f64,
        rng: &mut R,
    ) -> Result<(Matrix, Option<BasisCache>)> {
        let g = self.groups();
        if z.cols() != self.arity() || z.rows() % g.max(1) != 0 {
            return Err(Error::dim(
                "basis block input",
                format!("(n·{g})x{}", self.arity()),
                format!("{}x{}", z.rows(), z.cols()),
            ));
        }
        check_rate(basis_dropout)?;
        match mode {
            Mode::Eval => Ok((self.forward_eval(z, DEFAULT_ROW_BUDGET)?, None)),
            Mode::Train => {
                let (f, cache) = self.forward_train(z, hidden_dropout, basis_dropout, rng)?;
                Ok((f, Some(cache)))
            }
        }
    }

    fn forward_train<R: Rng + ?Sized>(
        &self,
        z: &Matrix,
        hidden_dropout: f64,
        basis_dropout: f64,
        rng: &mut R,
    ) -> Result<(Matrix, BasisCache)> {
        let g = self.groups();
        let n = z.rows() / g.max(1);
        let mut outs = Vec::with_capacity(self.nets.len());
        let mut caches = Vec::with_capacity(self.nets.len());
        for net in &self.nets {
            let (o, c) = net.forward(z, Mode::Train, hidden_dropout, rng)?;
            outs.push(o);
            caches.push(c);
        }
        let mut bases = if outs.len() == 1 {
            outs.pop().expect("one subnet")
        } else {
            concat_cols(&outs)
        };
        let mask = (basis_dropout > 0.0).then(|| {
            let m = dropout_mask(bases.data().len(), basis_dropout, rng);
            bases
                .data_mut()
                .iter_mut()
                .zip(&m)
                .for_each(|(v, k)| *v *= k);
            m
        });
        let f = self.project(&bases, n, |r| r);
        Ok((
            f,
            BasisCache {
                nets: caches,
                bases,
                mask,
                groups: g,
            },
        ))
    }

    fn forward_eval(&self, z: &Matrix, row_budget: usize) -> Result<Matrix> {
        let g = self.groups();
        let n = z.rows() / g.max(1);
        let (unique, index) = dedup_rows(z);
        let bases = if unique.rows() <= row_budget {
            self.evaluate_bases(&unique)?
        } else {
            let mut parts = Vec::new();
            let mut start = 0;
            while start < unique.rows() {
                let end = (start + row_budget).min(unique.rows());
                let idx: Vec<usize> = (start..end).collect();
                parts.push(self.evaluate_bases(&unique.select_rows(&idx))?);
                start = end;
            }
            concat_rows(&parts)
        };
        Ok(self.project(&bases, n, |r| index[r] as usize))
    }

    /// `F[b, g] = bases[row(b·G + g)] · projection[g]`.
    fn project(&self, bases: &Matrix, n: usize, row: impl Fn(usize) -> usize) -> Matrix {
        let g = self.groups();
        let mut f = Matrix::zeros(n, g);
        for b in 0..n {
            let out = f.row_mut(b);
            for (gi, o) in out.iter_mut().enumerate() {
                *o = dot(bases.row(row(b * g + gi)), self.projection.row(gi));
            }
        }
        f
    }

    /// Accumulates gradients given `dF` (`n × G`).
    pub fn backward_into(
        &self,
        cache: &BasisCache,
        grad_shapes: &Matrix,
        grads: &mut BasisBlock,
    ) -> Result<()> {
        let g = self.groups();
        if cache.groups != g || grad_shapes.cols() != g || grad_shapes.rows() * g != cache.bases.rows() {
            return Err(Error::Contract("basis cache does not match this forward pass".into()));
        }
        let width = self.width();
        let n = grad_shapes.rows();
        let mut dbases = Matrix::zeros(n * g, width);
        for b in 0..n {
            for gi in 0..g {
                let df = grad_shapes.get(b, gi);
                let r = b * g + gi;
                let h = cache.bases.row(r);
                let dp = grads.projection.row_mut(gi);
                dp.iter_mut().zip(h).for_each(|(d, h)| *d += df * h);
                let a = self.projection.row(gi);
                dbases
                    .row_mut(r)
                    .iter_mut()
                    .zip(a)
                    .for_each(|(d, a)| *d = df * a);
            }
        }
        if let Some(mask) = &cache.mask {
            dbases
                .data_mut()
                .iter_mut()
                .zip(mask)
                .for_each(|(d, m)| *d *= m);
        }
        let per = self.bases_per_net();
        for (s, (net, c)) in self.nets.iter().zip(&cache.nets).enumerate() {
            let gout = if self.nets.len() == 1 {
                std::mem::replace(&mut dbases, Matrix::zeros(0, 0))
            } else {
                slice_cols(&dbases, s * per, per)
            };
            net.backward_into(c, &gout, &mut grads.nets[s], false)?;
        }
        Ok(())
    }

    pub fn update_running_stats(&mut self, cache: &BasisCache) {
        for (net, c) in self.nets.iter_mut().zip(&cache.nets) {
            net.update_running_stats(c);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            nets: self.nets.iter().map(Mlp::zeros_like).collect(),
            projection: Matrix::zeros(self.projection.rows(), self.projection.cols()),
        }
    }
}

impl Tensors for BasisBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        for (s, net) in self.nets.iter().enumerate() {
            net.visit(&join(prefix, &format!("net{s}")), f);
        }
        f(TensorRef {
            name: join(prefix, "projection"),
            shape: vec![self.projection.rows(), self.projection.cols()],
            role: Role::Weight,
            data: self.projection.data(),
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        for (s, net) in self.nets.iter_mut().enumerate() {
            net.visit_mut(&join(prefix, &format!("net{s}")), f);
        }
        let shape = vec![self.projection.rows(), self.projection.cols()];
        f(TensorMut {
            name: join(prefix, "projection"),
            shape,
            role: Role::Weight,
            data: self.projection.data_mut(),
        });
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distinct rows of `z` (by bit pattern, in ascending order) and, for every
/// original row, the index of its distinct representative.
pub fn dedup_rows(z: &Matrix) -> (Matrix, Vec<u32>) {
    let cols = z.cols();
    let n = z.rows();
    let mut order: Vec<(u64, u64, u32)> = (0..n)
        .map(|r| {
            let row = z.row(r);
            let k0 = row.first().map_or(0, |v| v.to_bits());
            let k1 = row.get(1).map_or(0, |v| v.to_bits());
            (k0, k1, r as u32)
        })
        .collect();
    if cols <= 2 {
        order.sort_unstable();
    } else {
        order.sort_unstable_by(|a, b| {
            let (ra, rb) = (z.row(a.2 as usize), z.row(b.2 as usize));
            ra.iter()
                .map(|v| v.to_bits())
                .cmp(rb.iter().map(|v| v.to_bits()))
        });
    }
    let mut index = vec![0u32; n];
    let mut data = Vec::new();
    let mut count = 0u32;
    let mut prev: Option<usize> = None;
    for &(_, _, r) in &order {
        let r = r as usize;
        let same = prev.is_some_and(|p| {
            z.row(p)
                .iter()
                .zip(z.row(r))
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            data.extend_from_slice(z.row(r));
            count += 1;
            prev = Some(r);
        }
        index[r] = count - 1;
    }
    (
        Matrix::new(count as usize, cols, data).expect("consistent dedup buffer"),
        index,
    )
}

pub(crate) fn concat_cols(parts: &[Matrix]) -> Matrix {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(Matrix::cols).sum();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let dst = out.row_mut(r);
        let mut off = 0;
        for p in parts {
            dst[off..off + p.cols()].copy_from_slice(p.row(r));
            off += p.cols();
        }
    }
    out
}

pub(crate) fn concat_rows(parts: &[Matrix]) -> Matrix {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let rows = data.len() / cols.max(1);
    Matrix::new(rows, cols, data).expect("row concat of equal widths")
}

fn slice_cols(m: &Matrix, start: usize, len: usize) -> Matrix {
    Matrix::from_fn(m.rows(), len, |r, c| m.get(r, start + c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_maps_rows_to_representatives() {
        let z = Matrix::column(&[0.5, 0.0, 0.5, 1.0, 0.0]);
        let (u, idx) = dedup_rows(&z);
        assert_eq!(u.data(), &[0.0, 0.5, 1.0]);
        for (r, &i) in idx.iter().enumerate() {
            assert_eq!(u.get(i as usize, 0), z.get(r, 0));
        }
        let z2 = Matrix::from_rows(&[[1.0, 2.0], [1.0, 3.0], [1.0, 2.0]]).unwrap();
        let (u2, idx2) = dedup_rows(&z2);
        assert_eq!(u2.rows(), 2);
        assert_eq!(idx2[0], idx2[2]);
        assert_ne!(idx2[0], idx2[1]);
    }
}
