use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix, Trans};
use crate::models::basis::{BasisBlock, BasisCache};
use crate::models::Dropout;
use crate::nn::{LinearLayer, Mode};
use crate::tensors::{join, Role, TensorMut, TensorRef, Tensors};

/// Single-feature shape functions from one shared basis network:
/// `g_l(x) = f0_l + Σ_i Σ_k h_k(x_i)·a_ik·w_il`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbmParams {
    pub unary: BasisBlock,
    /// `D × C`, kept explicit even when `C = 1`.
    pub class_weights: Matrix,
    pub bias: Vec<f64>,
}

/// NBM plus bivariate shape functions over every feature pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nb2mParams {
    pub nbm: NbmParams,
    pub pair: BasisBlock,
    /// `P × C`.
    pub pair_weights: Matrix,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct NbmCache {
    basis: BasisCache,
    shapes: Matrix,
}

#[derive(Debug, Clone)]
pub struct Nb2mCache {
    unary: NbmCache,
    pair: BasisCache,
    pair_shapes: Matrix,
}

/// Lexicographic `(i, j)`, `i < j`.
pub fn pair_index(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            out.push((i, j));
        }
    }
    out
}

/// `(n·P) × 2` pair inputs, row `b·P + p` holding `(x_bi, x_bj)`.
pub fn materialize_pairs(x: &Matrix, pairs: &[(usize, usize)]) -> Matrix {
    let p = pairs.len();
    let mut data = Vec::with_capacity(x.rows() * p * 2);
    for b in 0..x.rows() {
        let row = x.row(b);
        for &(i, j) in pairs {
            data.push(row[i]);
            data.push(row[j]);
        }
    }
    Matrix::new(x.rows() * p, 2, data).expect("pair buffer shape")
}

/// `bias + shapes·weights`.
pub(crate) fn combine(shapes: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    let mut logits = Matrix::zeros(shapes.rows(), weights.cols());
    for r in 0..logits.rows() {
        logits.row_mut(r).copy_from_slice(bias);
    }
    gemm(1.0, shapes, Trans::No, weights, Trans::No, 1.0, &mut logits)?;
    Ok(logits)
}

/// `dW += shapesᵀ·G` and returns `dF = G·Wᵀ`.
pub(crate) fn combine_backward(
    shapes: &Matrix,
    weights: &Matrix,
    grad_logits: &Matrix,
    grad_weights: &mut Matrix,
) -> Result<Matrix> {
    gemm(1.0, shapes, Trans::Yes, grad_logits, Trans::No, 1.0, grad_weights)?;
    let mut df = Matrix::zeros(shapes.rows(), shapes.cols());
    gemm(1.0, grad_logits, Trans::No, weights, Trans::Yes, 0.0, &mut df)?;
    Ok(df)
}

impl NbmParams {
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        c: usize,
        hidden: &[usize],
        bases: usize,
        subnets: usize,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let unary = BasisBlock::new(d, 1, hidden, bases, subnets, batch_norm, rng)?;
        Ok(Self {
            unary,
            class_weights: LinearLayer::init_output(d, c, rng).weight,
            bias: vec![0.0; c],
        })
    }

    pub fn num_features(&self) -> usize {
        self.unary.groups()
    }

    pub fn num_outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            unary: self.unary.zeros_like(),
            class_weights: Matrix::zeros(self.class_weights.rows(), self.class_weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.num_features() {
            return Err(Error::dim("NBM input features", self.num_features(), x.cols()));
        }
        Ok(())
    }
}

/// Returns logits (`n × C`), per-feature shape values (`n × D`) and, in
/// training mode, the cache for [`nbm_backward`].
pub fn nbm_forward<R: Rng + ?Sized>(
    x: &Matrix,
    params: &NbmParams,
    mode: Mode,
    rng: &mut R,
    dropout: Dropout,
) -> Result<(Matrix, Matrix, Option<NbmCache>)> {
    params.check_input(x)?;
    let z = Matrix::column(x.data());
    let (shapes, basis) = params
        .unary
        .forward(&z, mode, dropout.hidden, dropout.basis, rng)?;
    shapes.ensure_finite("NBM shape functions")?;
    let logits = combine(&shapes, &params.class_weights, &params.bias)?;
    let cache = basis.map(|basis| NbmCache {
        basis,
        shapes: shapes.clone(),
    });
    Ok((logits, shapes, cache))
}

/// Exact gradients for every NBM parameter. `grad_shapes` carries any extra
/// gradient on the shape values (the output penalty).
pub fn nbm_backward(
    params: &NbmParams,
    cache: &NbmCache,
    grad_logits: &Matrix,
    grad_shapes: Option<&Matrix>,
) -> Result<NbmParams> {
    let mut grads = params.zeros_like();
    nbm_backward_into(params, cache, grad_logits, grad_shapes, &mut grads)?;
    Ok(grads)
}

fn nbm_backward_into(
    params: &NbmParams,
    cache: &NbmCache,
    grad_logits: &Matrix,
    grad_shapes: Option<&Matrix>,
    grads: &mut NbmParams,
) -> Result<()> {
    if grad_logits.rows() != cache.shapes.rows() || grad_logits.cols() != params.num_outputs() {
        return Err(Error::Contract("logit gradient does not match the cached batch".into()));
    }
    for (g, s) in grads.bias.iter_mut().zip(grad_logits.col_sums()) {
        *g += s;
    }
    let mut df = combine_backward(
        &cache.shapes,
        &params.class_weights,
        grad_logits,
        &mut grads.class_weights,
    )?;
    if let Some(extra) = grad_shapes {
        df.add_assign(extra)?;
    }
    params.unary.backward_into(&cache.basis, &df, &mut grads.unary)
}

impl Nb2mParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        c: usize,
        hidden: &[usize],
        bases: usize,
        pair_bases: usize,
        subnets: usize,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config("pairwise models need at least two features".into()));
        }
        let nbm = NbmParams::new(d, c, hidden, bases, subnets, batch_norm, rng)?;
        let pairs = pair_index(d);
        let pair = BasisBlock::new(pairs.len(), 2, hidden, pair_bases, subnets, batch_norm, rng)?;
        Ok(Self {
            nbm,
            pair,
            pair_weights: LinearLayer::init_output(pairs.len(), c, rng).weight,
            pairs,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            nbm: self.nbm.zeros_like(),
            pair: self.pair.zeros_like(),
            pair_weights: Matrix::zeros(self.pair_weights.rows(), self.pair_weights.cols()),
            pairs: self.pairs.clone(),
        }
    }
}

/// Logits, unary shapes, pair shapes (`n × P`) and the training cache.
pub fn nb2m_forward<R: Rng + ?Sized>(
    x: &Matrix,
    params: &Nb2mParams,
    mode: Mode,
    rng: &mut R,
    dropout: Dropout,
) -> Result<(Matrix, Matrix, Matrix, Option<Nb2mCache>)> {
    let (mut logits, shapes, unary) = nbm_forward(x, &params.nbm, mode, rng, dropout)?;
    let z = materialize_pairs(x, &params.pairs);
    let (pair_shapes, pair) = params
        .pair
        .forward(&z, mode, dropout.hidden, dropout.basis, rng)?;
    pair_shapes.ensure_finite("NB2M pair shape functions")?;
    gemm(
        1.0,
        &pair_shapes,
        Trans::No,
        &params.pair_weights,
        Trans::No,
        1.0,
        &mut logits,
    )?;
    let cache = match (unary, pair) {
        (Some(unary), Some(pair)) => Some(Nb2mCache {
            unary,
            pair,
            pair_shapes: pair_shapes.clone(),
        }),
        _ => None,
    };
    Ok((logits, shapes, pair_shapes, cache))
}

pub fn nb2m_backward(
    params: &Nb2mParams,
    cache: &Nb2mCache,
    grad_logits: &Matrix,
    grad_shapes: Option<&Matrix>,
    grad_pair_shapes: Option<&Matrix>,
) -> Result<Nb2mParams> {
    let mut grads = params.zeros_like();
    nbm_backward_into(&params.nbm, &cache.unary, grad_logits, grad_shapes, &mut grads.nbm)?;
    let mut df = combine_backward(
        &cache.pair_shapes,
        &params.pair_weights,
        grad_logits,
        &mut grads.pair_weights,
    )?;
    if let Some(extra) = grad_pair_shapes {
        df.add_assign(extra)?;
    }
    params.pair.backward_into(&cache.pair, &df, &mut grads.pair)?;
    Ok(grads)
}

impl NbmParams {
    pub(crate) fn update_running_stats(&mut self, cache: &NbmCache) {
        self.unary.update_running_stats(&cache.basis);
    }
}

impl Nb2mParams {
    pub(crate) fn update_running_stats(&mut self, cache: &Nb2mCache) {
        self.nbm.update_running_stats(&cache.unary);
        self.pair.update_running_stats(&cache.pair);
    }
}

impl Tensors for NbmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        self.unary.visit(&join(prefix, "unary"), f);
        f(TensorRef {
            name: join(prefix, "class_weights"),
            shape: vec![self.class_weights.rows(), self.class_weights.cols()],
            role: Role::Weight,
            data: self.class_weights.data(),
        });
        f(TensorRef {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &self.bias,
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.unary.visit_mut(&join(prefix, "unary"), f);
        let shape = vec![self.class_weights.rows(), self.class_weights.cols()];
        f(TensorMut {
            name: join(prefix, "class_weights"),
            shape,
            role: Role::Weight,
            data: self.class_weights.data_mut(),
        });
        f(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &mut self.bias,
        });
    }
}

impl Tensors for Nb2mParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        self.nbm.visit(prefix, f);
        self.pair.visit(&join(prefix, "pair"), f);
        f(TensorRef {
            name: join(prefix, "pair_weights"),
            shape: vec![self.pair_weights.rows(), self.pair_weights.cols()],
            role: Role::Weight,
            data: self.pair_weights.data(),
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.nbm.visit_mut(prefix, f);
        self.pair.visit_mut(&join(prefix, "pair"), f);
        let shape = vec![self.pair_weights.rows(), self.pair_weights.cols()];
        f(TensorMut {
            name: join(prefix, "pair_weights"),
            shape,
            role: Role::Weight,
            data: self.pair_weights.data_mut(),
        });
    }
}
