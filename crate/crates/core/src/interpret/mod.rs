//! Shape-function export, additive decomposition, stability scoring and
//! throughput measurement.

pub mod bench;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{Dropout, Model};
use crate::nn::Mode;

pub use bench::{throughput_bench, time_per_call, BenchReport};

pub const DEFAULT_GRID: usize = 256;
pub const DENSITY_BINS: usize = 64;
pub const DEFAULT_TOP_PAIRS: usize = 10;
const CHUNK: usize = 4096;

/// One feature's contribution to one output, on a uniform grid over the
/// training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub name: String,
    pub grid: Vec<f64>,
    /// Contribution minus `mean` at each grid point.
    pub centered: Vec<f64>,
    /// Mean contribution over the training rows.
    pub mean: f64,
    /// `DENSITY_BINS + 1` edges spanning the training range.
    pub density_edges: Vec<f64>,
    /// Fraction of training rows in each bin.
    pub density: Vec<f64>,
}

impl FeatureShape {
    /// Density of the bin containing `v`.
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.density_edges[0], *self.density_edges.last().unwrap())
    }
}

/// One pair's contribution on a `grid_i × grid_j` lattice (row-major in `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShape {
    pub features: (usize, usize),
    /// Column of the pair in the model's pair order.
    pub index: usize,
    pub grid_i: Vec<f64>,
    pub grid_j: Vec<f64>,
    pub centered: Vec<f64>,
    pub mean: f64,
    /// Mean absolute centered contribution over the training rows.
    pub importance: f64,
}

/// Centered shape functions of one output of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub model_kind: String,
    pub output: usize,
    /// Bias of this output.
    pub intercept: f64,
    pub features: Vec<FeatureShape>,
    pub pairs: Vec<PairShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub grid: usize,
    /// Pair lattice side length.
    pub pair_grid: usize,
    pub top_pairs: usize,
    pub output: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            pair_grid: DEFAULT_GRID,
            top_pairs: DEFAULT_TOP_PAIRS,
            output: 0,
        }
    }
}

fn bin_index(v: f64, lo: f64, hi: f64) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * DENSITY_BINS as f64).floor().max(0.0) as usize).min(DENSITY_BINS - 1)
}

fn uniform_grid(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    if g == 1 {
        return vec![lo];
    }
    (0..g)
        .map(|k| if k + 1 == g { hi } else { lo + (hi - lo) * k as f64 / (g - 1) as f64 })
        .collect()
}

/// Eval-mode shape values `(n × D, n × P)` computed in row chunks.
pub fn shape_values(model: &Model, x: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
    let mut rng = crate::seeded_rng(0);
    let d = model.num_features();
    let p = model.pairs().map(|v| v.len());
    let mut shapes = Matrix::zeros(x.rows(), d);
    let mut pair_shapes = p.map(|p| Matrix::zeros(x.rows(), p));
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let fwd = model.forward(&x.select_rows(&idx), Mode::Eval, Dropout::default(), &mut rng)?;
        for (k, r) in (start..end).enumerate() {
            shapes.row_mut(r).copy_from_slice(fwd.shapes.row(k));
            if let (Some(dst), Some(src)) = (pair_shapes.as_mut(), fwd.pair_shapes.as_ref()) {
                dst.row_mut(r).copy_from_slice(src.row(k));
            }
        }
        start = end;
    }
    Ok((shapes, pair_shapes))
}

/// Per-term contributions to output `l`: `shape · weight`, `n × (D + P)`.
fn contributions(model: &Model, x: &Matrix, output: usize) -> Result<Matrix> {
    let layer = model.output_layer();
    if output >= layer.bias.len() {
        return Err(Error::dim("output index", format!("< {}", layer.bias.len()), output));
    }
    let (shapes, pair_shapes) = shape_values(model, x)?;
    let d = shapes.cols();
    let p = pair_shapes.as_ref().map_or(0, Matrix::cols);
    let mut out = Matrix::zeros(x.rows(), d + p);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        for i in 0..d {
            row[i] = shapes.get(r, i) * layer.weights.get(i, output);
        }
        if let (Some(ps), Some(pw)) = (pair_shapes.as_ref(), layer.pair_weights) {
            for q in 0..p {
                row[d + q] = ps.get(r, q) * pw.get(q, output);
            }
        }
    }
    Ok(out)
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let n = m.rows().max(1) as f64;
    m.col_sums().into_iter().map(|s| s / n).collect()
}

/// Exports every feature's centered contribution to `opts.output` on a
/// uniform grid over the training range, with the training-data density,
/// plus the `opts.top_pairs` most important pair lattices.
pub fn export_shape_functions(
    model: &Model,
    train_x: &Matrix,
    feature_names: &[String],
    opts: &ExplainOptions,
) -> Result<ShapeTable> {
    let d = model.num_features();
    if train_x.cols() != d {
        return Err(Error::dim("training features", d, train_x.cols()));
    }
    if feature_names.len() != d {
        return Err(Error::dim("feature names", d, feature_names.len()));
    }
    if train_x.rows() == 0 {
        return Err(Error::Data("shape export needs training rows".into()));
    }
    if opts.grid == 0 || opts.pair_grid == 0 {
        return Err(Error::Config("grid sizes must be positive".into()));
    }
    let layer = model.output_layer();
    let contrib = contributions(model, train_x, opts.output)?;
    contrib.ensure_finite("training contributions")?;
    let means = column_means(&contrib);

    let ranges: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let col = train_x.col(i);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let grids: Vec<Vec<f64>> = ranges.iter().map(|&(lo, hi)| uniform_grid(lo, hi, opts.grid)).collect();
    let grid_x = Matrix::from_fn(opts.grid, d, |k, i| grids[i][k]);
    let grid_contrib = contributions(model, &grid_x, opts.output)?;

    let features = (0..d)
        .map(|i| {
            let (lo, hi) = ranges[i];
            let mut counts = vec![0usize; DENSITY_BINS];
            for r in 0..train_x.rows() {
                counts[bin_index(train_x.get(r, i), lo, hi)] += 1;
            }
            FeatureShape {
                name: feature_names[i].clone(),
                grid: grids[i].clone(),
                centered: (0..opts.grid).map(|k| grid_contrib.get(k, i) - means[i]).collect(),
                mean: means[i],
                density_edges: uniform_grid(lo, hi, DENSITY_BINS + 1),
                density: counts
                    .iter()
                    .map(|&c| c as f64 / train_x.rows() as f64)
                    .collect(),
            }
        })
        .collect();

    let mut pairs = Vec::new();
    if let (Some(pair_list), Some(pw)) = (model.pairs(), layer.pair_weights) {
        let mut ranked: Vec<(usize, f64)> = (0..pair_list.len())
            .map(|q| {
                let c = d + q;
                let imp = (0..contrib.rows())
                    .map(|r| (contrib.get(r, c) - means[c]).abs())
                    .sum::<f64>()
                    / contrib.rows() as f64;
                (q, imp)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(q, importance) in ranked.iter().take(opts.top_pairs) {
            let (i, j) = pair_list[q];
            let gi = uniform_grid(ranges[i].0, ranges[i].1, opts.pair_grid);
            let gj = uniform_grid(ranges[j].0, ranges[j].1, opts.pair_grid);
            let z = Matrix::from_fn(gi.len() * gj.len(), 2, |r, c| {
                if c == 0 {
                    gi[r / gj.len()]
                } else {
                    gj[r % gj.len()]
                }
            });
            let w = pw.get(q, opts.output);
            let mean = means[d + q];
            let centered = model
                .pair_shape(q, &z)?
                .into_iter()
                .map(|v| v * w - mean)
                .collect();
            pairs.push(PairShape {
                features: (i, j),
                index: q,
                grid_i: gi,
                grid_j: gj,
                centered,
                mean,
                importance,
            });
        }
    }

    Ok(ShapeTable {
        model_kind: model.kind().name().to_string(),
        output: opts.output,
        intercept: layer.bias[opts.output],
        features,
        pairs,
    })
}

/// Per-row centered contributions and the offsets that restore the logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `n × (D + P)` centered contributions.
    pub terms: Matrix,
    /// Training means per term.
    pub offsets: Vec<f64>,
    pub intercept: f64,
}

impl Decomposition {
    /// `intercept + Σ offsets + Σ terms` per row.
    pub fn reconstruct(&self) -> Vec<f64> {
        let base = self.intercept + self.offsets.iter().sum::<f64>();
        (0..self.terms.rows())
            .map(|r| base + self.terms.row(r).iter().sum::<f64>())
            .collect()
    }
}

/// Splits the logits of `x` for `table.output` into the table's centered
/// terms (every pair is included, not only the exported ones).
pub fn decompose(model: &Model, table: &ShapeTable, train_x: &Matrix, x: &Matrix) -> Result<Decomposition> {
    let d = model.num_features();
    if table.features.len() != d {
        return Err(Error::dim("shape table features", d, table.features.len()));
    }
    let mut offsets: Vec<f64> = table.features.iter().map(|f| f.mean).collect();
    if model.pairs().is_some() {
        let train = contributions(model, train_x, table.output)?;
        offsets.extend_from_slice(&column_means(&train)[d..]);
    }
    let mut terms = contributions(model, x, table.output)?;
    for r in 0..terms.rows() {
        for (v, m) in terms.row_mut(r).iter_mut().zip(&offsets) {
            *v -= m;
        }
    }
    Ok(Decomposition {
        terms,
        offsets,
        intercept: table.intercept,
    })
}

/// Mean over features and grid points of the population standard deviation
/// of centered shape values across runs.
pub fn stability_score(tables: &[ShapeTable]) -> Result<f64> {
    if tables.len() < 2 {
        return Err(Error::Contract(format!("stability needs at least 2 runs, got {}", tables.len())));
    }
    let first = &tables[0];
    for t in &tables[1..] {
        let same = t.features.len() == first.features.len()
            && t.features.iter().zip(&first.features).all(|(a, b)| a.grid == b.grid);
        if !same {
            return Err(Error::Data("shape tables were evaluated on different grids".into()));
        }
    }
    let e = tables.len() as f64;
    let mut per_feature = Vec::with_capacity(first.features.len());
    for i in 0..first.features.len() {
        let g = first.features[i].grid.len();
        let mut total = 0.0;
        for k in 0..g {
            let vals = tables.iter().map(|t| t.features[i].centered[k]);
            let mean = vals.clone().sum::<f64>() / e;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / e;
            total += var.sqrt();
        }
        per_feature.push(total / g as f64);
    }
    if per_feature.is_empty() {
        return Err(Error::Data("shape tables have no features".into()));
    }
    Ok(per_feature.iter().sum::<f64>() / per_feature.len() as f64)
}

/// CSV: `feature,x,f_centered,density_bin_left,density`, one row per grid
/// point.
pub fn write_shape_csv<W: Write>(table: &ShapeTable, mut out: W) -> std::io::Result<()> {
    writeln!(out, "feature,x,f_centered,density_bin_left,density")?;
    for f in &table.features {
        for (x, v) in f.grid.iter().zip(&f.centered) {
            let b = f.bin_of(*x);
            writeln!(out, "{},{x},{v},{},{}", f.name, f.density_edges[b], f.density[b])?;
        }
    }
    Ok(())
}

/// CSV: `pair,x_i,x_j,f_centered`, one row per lattice point.
pub fn write_pair_csv<W: Write>(table: &ShapeTable, names: &[String], mut out: W) -> std::io::Result<()> {
    writeln!(out, "pair,x_i,x_j,f_centered")?;
    for p in &table.pairs {
        let label = format!("{}|{}", names[p.features.0], names[p.features.1]);
        let gj = p.grid_j.len();
        for (k, v) in p.centered.iter().enumerate() {
            writeln!(out, "{label},{},{},{v}", p.grid_i[k / gj], p.grid_j[k % gj])?;
        }
    }
    Ok(())
}

/// Sidecar with the offsets and grid metadata needed to read the CSVs.
pub fn shape_metadata(table: &ShapeTable) -> serde_json::Value {
    serde_json::json!({
        "model_kind": table.model_kind,
        "output": table.output,
        "intercept": table.intercept,
        "grid_size": table.features.first().map_or(0, |f| f.grid.len()),
        "density_bins": DENSITY_BINS,
        "features": table.features.iter().map(|f| serde_json::json!({
            "name": f.name,
            "mean": f.mean,
            "min": f.grid.first(),
            "max": f.grid.last(),
        })).collect::<Vec<_>>(),
        "pairs": table.pairs.iter().map(|p| serde_json::json!({
            "features": [p.features.0, p.features.1],
            "index": p.index,
            "mean": p.mean,
            "importance": p.importance,
            "grid_size": [p.grid_i.len(), p.grid_j.len()],
        })).collect::<Vec<_>>(),
    })
}
