use crate::models::{Architecture, ModelKind};
use crate::nn::mlp_param_count;

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Learnable scalars of one basis network (`N` for NBM, `N₂` for pairs).
pub fn basis_net_params(arity: usize, hidden: &[usize], bases: usize, batch_norm: bool) -> usize {
    mlp_param_count(&widths(arity, hidden, bases), batch_norm)
}

/// Learnable scalars of one NAM subnetwork (`M`, or `M₂` for pairs).
pub fn nam_subnet_params(arity: usize, hidden: &[usize], batch_norm: bool) -> usize {
    mlp_param_count(&widths(arity, hidden, 1), batch_norm)
}

pub fn num_pairs(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Exact learnable-scalar count in closed form, biases and the output
/// offset included. Batch-norm running statistics are not learnable.
pub fn param_count(arch: &Architecture) -> usize {
    let d = arch.num_features;
    let c = arch.num_outputs;
    let s = arch.num_subnets;
    let p = num_pairs(d);
    let bn = arch.batch_norm;
    let h = &arch.hidden;
    match arch.kind {
        ModelKind::Linear => d * c + c,
        ModelKind::Nam => d * nam_subnet_params(1, h, bn) + d * c + c,
        ModelKind::Na2m => {
            d * nam_subnet_params(1, h, bn) + d * c + p * nam_subnet_params(2, h, bn) + p * c + c
        }
        ModelKind::Nbm => {
            let b = arch.num_bases;
            s * basis_net_params(1, h, b, bn) + d * s * b + d * c + c
        }
        ModelKind::Nb2m => {
            let (b, b2) = (arch.num_bases, arch.pair_bases);
            s * basis_net_params(1, h, b, bn)
                + d * s * b
                + d * c
                + s * basis_net_params(2, h, b2, bn)
                + p * s * b2
                + p * c
                + c
        }
    }
}

/// `clamp(ceil(c·ln D), min, max)`: bases grow logarithmically with the
/// feature count.
pub fn suggest_num_bases_with(d: usize, c: f64, min: usize, max: usize) -> usize {
    let raw = (c * (d.max(1) as f64).ln()).ceil() as usize;
    raw.clamp(min, max)
}

pub fn suggest_num_bases(d: usize, pairwise: bool) -> usize {
    suggest_num_bases_with(d, 25.0, 16, if pairwise { 200 } else { 100 })
}
