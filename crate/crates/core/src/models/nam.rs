//! Neural Additive Models: one independent MLP per feature (and per pair for
//! NA²M). The per-feature networks run as one grouped computation — every
//! group owns its weights, groups are independent, and the eval kernel streams
//! row tiles through each group's whole network so nothing larger than a
//! tile is ever materialized.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gemm_raw, Matrix, Trans};
use crate::models::nbm::{combine, combine_backward, pair_index};
use crate::models::Dropout;
use crate::nn::activation::{check_rate, dropout_mask};
use crate::nn::{LinearLayer, Mlp, MlpCache, Mode};
use crate::par;
use crate::tensors::{join, Role, TensorMut, TensorRef, Tensors};

const TILE_ROWS: usize = 256;

/// `G` MLPs of identical architecture; group `g` reads the input columns
/// listed in `inputs[g]` and emits one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMlp {
    pub nets: Vec<Mlp>,
    pub inputs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct GroupedCache {
    nets: Vec<MlpCache>,
}

impl GroupedMlp {
    pub fn new<R: Rng + ?Sized>(
        inputs: Vec<Vec<usize>>,
        hidden: &[usize],
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let arity = inputs.first().map_or(1, Vec::len);
        if inputs.iter().any(|c| c.len() != arity) {
            return Err(Error::Config("grouped MLP groups must share one arity".into()));
        }
        let mut widths = vec![arity];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let nets = inputs
            .iter()
            .map(|_| Mlp::new(&widths, batch_norm, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nets, inputs })
    }

    pub fn groups(&self) -> usize {
        self.nets.len()
    }

    fn gather(&self, x: &Matrix, g: usize, start: usize, end: usize, out: &mut Vec<f64>) {
        out.clear();
        for r in start..end {
            let row = x.row(r);
            out.extend(self.inputs[g].iter().map(|&c| row[c]));
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        let need = self
            .inputs
            .iter()
            .flatten()
            .max()
            .map_or(0, |&c| c + 1);
        if x.cols() < need {
            return Err(Error::dim("grouped MLP input columns", need, x.cols()));
        }
        Ok(())
    }

    /// Training forward, `n × G`. Each group draws its dropout masks from
    /// its own generator seeded off `rng`, so results do not depend on how
    /// groups are scheduled across threads.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        dropout: f64,
        rng: &mut R,
    ) -> Result<(Matrix, GroupedCache)> {
        self.check_input(x)?;
        check_rate(dropout)?;
        let n = x.rows();
        let seeds: Vec<u64> = (0..self.groups()).map(|_| rng.gen()).collect();
        let results = par::map_indexed(self.groups(), |g| {
            let mut buf = Vec::with_capacity(n * self.inputs[g].len());
            self.gather(x, g, 0, n, &mut buf);
            let z = Matrix::new(n, self.inputs[g].len(), buf)?;
            let mut local = crate::seeded_rng(seeds[g]);
            self.nets[g].forward(&z, Mode::Train, dropout, &mut local)
        });
        let mut f = Matrix::zeros(n, self.groups());
        let mut caches = Vec::with_capacity(self.groups());
        for (g, res) in results.into_iter().enumerate() {
            let (out, cache) = res?;
            for (r, v) in out.data().iter().enumerate() {
                f.set(r, g, *v);
            }
            caches.push(cache);
        }
        Ok((f, GroupedCache { nets: caches }))
    }

    /// Gradients for every group given `dF` (`n × G`).
    pub fn backward(&self, cache: &GroupedCache, grad: &Matrix) -> Result<GroupedMlp> {
        if cache.nets.len() != self.groups() || grad.cols() != self.groups() {
            return Err(Error::Contract("grouped cache does not match this forward pass".into()));
        }
        let nets = par::map_indexed(self.groups(), |g| {
            let mut acc = self.nets[g].zeros_like();
            let col = Matrix::column(&grad.col(g));
            self.nets[g].backward_into(&cache.nets[g], &col, &mut acc, false)?;
            Ok(acc)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(GroupedMlp {
            nets,
            inputs: self.inputs.clone(),
        })
    }

    /// Eval-mode forward, `n × G`, via the row-tiled fused kernel.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let n = x.rows();
        let columns = par::map_indexed(self.groups(), |g| {
            let fused = FusedNet::new(&self.nets[g]);
            let mut out = vec![0.0; n];
            let mut input = Vec::with_capacity(TILE_ROWS * self.inputs[g].len());
            let mut scratch = fused.scratch();
            let mut start = 0;
            while start < n {
                let end = (start + TILE_ROWS).min(n);
                self.gather(x, g, start, end, &mut input);
                fused.run(&input, end - start, &mut scratch, &mut out[start..end]);
                start = end;
            }
            out
        });
        let mut f = Matrix::zeros(n, self.groups());
        for (g, col) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                f.set(r, g, *v);
            }
        }
        f.ensure_finite("NAM subnet outputs")?;
        Ok(f)
    }

    pub fn update_running_stats(&mut self, cache: &GroupedCache) {
        for (net, c) in self.nets.iter_mut().zip(&cache.nets) {
            net.update_running_stats(c);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            nets: self.nets.iter().map(Mlp::zeros_like).collect(),
            inputs: self.inputs.clone(),
        }
    }
}

/// An eval-mode network with batch-norm folded into the affine layers.
struct FusedNet {
    layers: Vec<LinearLayer>,
}

impl FusedNet {
    fn new(net: &Mlp) -> Self {
        let mut layers = Vec::with_capacity(net.hidden.len() + 1);
        for h in &net.hidden {
            let mut lin = h.linear.clone();
            if let Some(bn) = &h.norm {
                let out = lin.fan_out();
                for c in 0..out {
                    let s = bn.gamma[c] / (bn.running_var[c] + bn.epsilon).sqrt();
                    for r in 0..lin.fan_in() {
                        let w = lin.weight.get(r, c);
                        lin.weight.set(r, c, w * s);
                    }
                    lin.bias[c] = (lin.bias[c] - bn.running_mean[c]) * s + bn.beta[c];
                }
            }
            layers.push(lin);
        }
        layers.push(net.output.clone());
        Self { layers }
    }

    fn scratch(&self) -> [Vec<f64>; 2] {
        let widest = self.layers.iter().map(LinearLayer::fan_out).max().unwrap_or(1);
        [vec![0.0; TILE_ROWS * widest], vec![0.0; TILE_ROWS * widest]]
    }

    fn run(&self, input: &[f64], rows: usize, scratch: &mut [Vec<f64>; 2], out: &mut [f64]) {
        let last = self.layers.len() - 1;
        let [a, b] = scratch;
        let mut cur: &mut Vec<f64> = a;
        let mut next: &mut Vec<f64> = b;
        for (li, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            let src: &[f64] = if li == 0 { input } else { &cur[..rows * fi] };
            let dst = &mut next[..rows * fo];
            for r in 0..rows {
                dst[r * fo..(r + 1) * fo].copy_from_slice(&layer.bias);
            }
            if fi <= 2 {
                let w = layer.weight.data();
                for r in 0..rows {
                    let d = &mut dst[r * fo..(r + 1) * fo];
                    for (k, &xv) in src[r * fi..(r + 1) * fi].iter().enumerate() {
                        d.iter_mut()
                            .zip(&w[k * fo..(k + 1) * fo])
                            .for_each(|(o, w)| *o += xv * w);
                    }
                }
            } else {
                gemm_raw(
                    1.0,
                    src,
                    fi,
                    Trans::No,
                    layer.weight.data(),
                    fo,
                    Trans::No,
                    1.0,
                    dst,
                    rows,
                    fi,
                    fo,
                );
            }
            if li < last {
                dst.iter_mut().for_each(|v| *v = v.max(0.0));
                std::mem::swap(&mut cur, &mut next);
            } else {
                out.copy_from_slice(&dst[..rows]);
            }
        }
    }
}

impl Tensors for GroupedMlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        for (g, net) in self.nets.iter().enumerate() {
            net.visit(&join(prefix, &format!("group{g}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        for (g, net) in self.nets.iter_mut().enumerate() {
            net.visit_mut(&join(prefix, &format!("group{g}")), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamPairs {
    pub nets: GroupedMlp,
    /// `P × C`.
    pub weights: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamParams {
    pub unary: GroupedMlp,
    /// `D × C` final combination weights.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// Present for NA²M.
    pub pair: Option<NamPairs>,
}

#[derive(Debug, Clone)]
struct Branch {
    cache: GroupedCache,
    /// Contributions after feature dropout.
    dropped: Matrix,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NamCache {
    unary: Branch,
    pair: Option<Branch>,
    rows: usize,
}

impl NamParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        d: usize,
        c: usize,
        hidden: &[usize],
        pairs: bool,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let unary = GroupedMlp::new((0..d).map(|i| vec![i]).collect(), hidden, batch_norm, rng)?;
        let weights = LinearLayer::init_output(d, c, rng).weight;
        let pair = if pairs {
            if d < 2 {
                return Err(Error::Config("pairwise models need at least two features".into()));
            }
            let idx: Vec<Vec<usize>> = pair_index(d).into_iter().map(|(i, j)| vec![i, j]).collect();
            let p = idx.len();
            let nets = GroupedMlp::new(idx, hidden, batch_norm, rng)?;
            Some(NamPairs {
                nets,
                weights: LinearLayer::init_output(p, c, rng).weight,
            })
        } else {
            None
        };
        Ok(Self {
            unary,
            weights,
            bias: vec![0.0; c],
            pair,
        })
    }

    pub fn num_features(&self) -> usize {
        self.unary.groups()
    }

    pub fn num_outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn pairs(&self) -> Option<Vec<(usize, usize)>> {
        self.pair
            .as_ref()
            .map(|p| p.nets.inputs.iter().map(|c| (c[0], c[1])).collect())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            unary: self.unary.zeros_like(),
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
            pair: self.pair.as_ref().map(|p| NamPairs {
                nets: p.nets.zeros_like(),
                weights: Matrix::zeros(p.weights.rows(), p.weights.cols()),
            }),
        }
    }

    pub(crate) fn update_running_stats(&mut self, cache: &NamCache) {
        self.unary.update_running_stats(&cache.unary.cache);
        if let (Some(p), Some(b)) = (self.pair.as_mut(), cache.pair.as_ref()) {
            p.nets.update_running_stats(&b.cache);
        }
    }
}

fn apply_feature_dropout<R: Rng + ?Sized>(
    f: &Matrix,
    rate: f64,
    rng: &mut R,
) -> (Matrix, Option<Vec<f64>>) {
    if rate == 0.0 {
        return (f.clone(), None);
    }
    let mask = dropout_mask(f.data().len(), rate, rng);
    let mut dropped = f.clone();
    dropped
        .data_mut()
        .iter_mut()
        .zip(&mask)
        .for_each(|(v, m)| *v *= m);
    (dropped, Some(mask))
}

/// Logits, per-feature subnet outputs (before feature dropout), pair outputs
/// for NA²M, and the training cache.
pub fn nam_forward<R: Rng + ?Sized>(
    x: &Matrix,
    params: &NamParams,
    mode: Mode,
    rng: &mut R,
    dropout: Dropout,
) -> Result<(Matrix, Matrix, Option<Matrix>, Option<NamCache>)> {
    if x.cols() != params.num_features() {
        return Err(Error::dim("NAM input features", params.num_features(), x.cols()));
    }
    check_rate(dropout.feature)?;
    match mode {
        Mode::Eval => {
            let f = params.unary.predict(x)?;
            let mut logits = combine(&f, &params.weights, &params.bias)?;
            let pf = match &params.pair {
                Some(p) => {
                    let pf = p.nets.predict(x)?;
                    crate::matrix::gemm(1.0, &pf, Trans::No, &p.weights, Trans::No, 1.0, &mut logits)?;
                    Some(pf)
                }
                None => None,
            };
            Ok((logits, f, pf, None))
        }
        Mode::Train => {
            let (f, cache) = params.unary.forward_train(x, dropout.hidden, rng)?;
            f.ensure_finite("NAM subnet outputs")?;
            let (dropped, mask) = apply_feature_dropout(&f, dropout.feature, rng);
            let mut logits = combine(&dropped, &params.weights, &params.bias)?;
            let unary = Branch {
                cache,
                dropped,
                mask,
            };
            let (pf, pair) = match &params.pair {
                Some(p) => {
                    let (pf, cache) = p.nets.forward_train(x, dropout.hidden, rng)?;
                    pf.ensure_finite("NA2M pair outputs")?;
                    let (dropped, mask) = apply_feature_dropout(&pf, dropout.feature, rng);
                    crate::matrix::gemm(
                        1.0,
                        &dropped,
                        Trans::No,
                        &p.weights,
                        Trans::No,
                        1.0,
                        &mut logits,
                    )?;
                    (
                        Some(pf),
                        Some(Branch {
                            cache,
                            dropped,
                            mask,
                        }),
                    )
                }
                None => (None, None),
            };
            let cache = NamCache {
                unary,
                pair,
                rows: x.rows(),
            };
            Ok((logits, f, pf, Some(cache)))
        }
    }
}

fn branch_backward(
    nets: &GroupedMlp,
    weights: &Matrix,
    branch: &Branch,
    grad_logits: &Matrix,
    extra: Option<&Matrix>,
    grad_weights: &mut Matrix,
) -> Result<GroupedMlp> {
    let mut df = combine_backward(&branch.dropped, weights, grad_logits, grad_weights)?;
    if let Some(mask) = &branch.mask {
        df.data_mut()
            .iter_mut()
            .zip(mask)
            .for_each(|(d, m)| *d *= m);
    }
    if let Some(extra) = extra {
        df.add_assign(extra)?;
    }
    nets.backward(&branch.cache, &df)
}

pub fn nam_backward(
    params: &NamParams,
    cache: &NamCache,
    grad_logits: &Matrix,
    grad_shapes: Option<&Matrix>,
    grad_pair_shapes: Option<&Matrix>,
) -> Result<NamParams> {
    if grad_logits.rows() != cache.rows || grad_logits.cols() != params.num_outputs() {
        return Err(Error::Contract("logit gradient does not match the cached batch".into()));
    }
    let mut grads = params.zeros_like();
    for (g, s) in grads.bias.iter_mut().zip(grad_logits.col_sums()) {
        *g += s;
    }
    grads.unary = branch_backward(
        &params.unary,
        &params.weights,
        &cache.unary,
        grad_logits,
        grad_shapes,
        &mut grads.weights,
    )?;
    if let (Some(p), Some(b), Some(gp)) = (&params.pair, &cache.pair, grads.pair.as_mut()) {
        gp.nets = branch_backward(&p.nets, &p.weights, b, grad_logits, grad_pair_shapes, &mut gp.weights)?;
    }
    Ok(grads)
}

/// Reference NAM evaluation: a plain loop over features, one independent
/// network call per feature. Used as an oracle and as a benchmark baseline.
pub fn nam_forward_naive(x: &Matrix, params: &NamParams) -> Result<Matrix> {
    if x.cols() != params.num_features() {
        return Err(Error::dim("NAM input features", params.num_features(), x.cols()));
    }
    let n = x.rows();
    let c = params.num_outputs();
    let mut logits = Matrix::zeros(n, c);
    for r in 0..n {
        logits.row_mut(r).copy_from_slice(&params.bias);
    }
    let mut accumulate = |nets: &GroupedMlp, weights: &Matrix| -> Result<()> {
        for (g, net) in nets.nets.iter().enumerate() {
            let cols = &nets.inputs[g];
            let z = Matrix::from_fn(n, cols.len(), |r, k| x.get(r, cols[k]));
            let out = net.predict(&z)?;
            for r in 0..n {
                let v = out.get(r, 0);
                for l in 0..c {
                    let cur = logits.get(r, l);
                    logits.set(r, l, cur + v * weights.get(g, l));
                }
            }
        }
        Ok(())
    };
    accumulate(&params.unary, &params.weights)?;
    if let Some(p) = &params.pair {
        accumulate(&p.nets, &p.weights)?;
    }
    Ok(logits)
}

impl Tensors for NamParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        self.unary.visit(&join(prefix, "unary"), f);
        f(TensorRef {
            name: join(prefix, "weights"),
            shape: vec![self.weights.rows(), self.weights.cols()],
            role: Role::Weight,
            data: self.weights.data(),
        });
        f(TensorRef {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &self.bias,
        });
        if let Some(p) = &self.pair {
            p.nets.visit(&join(prefix, "pair"), f);
            f(TensorRef {
                name: join(prefix, "pair_weights"),
                shape: vec![p.weights.rows(), p.weights.cols()],
                role: Role::Weight,
                data: p.weights.data(),
            });
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.unary.visit_mut(&join(prefix, "unary"), f);
        let shape = vec![self.weights.rows(), self.weights.cols()];
        f(TensorMut {
            name: join(prefix, "weights"),
            shape,
            role: Role::Weight,
            data: self.weights.data_mut(),
        });
        f(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &mut self.bias,
        });
        if let Some(p) = &mut self.pair {
            p.nets.visit_mut(&join(prefix, "pair"), f);
            let shape = vec![p.weights.rows(), p.weights.cols()];
            f(TensorMut {
                name: join(prefix, "pair_weights"),
                shape,
                role: Role::Weight,
                data: p.weights.data_mut(),
            });
        }
    }
}
