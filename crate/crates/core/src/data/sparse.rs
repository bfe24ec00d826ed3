//! Sparse text format: one row per line, `label idx:val idx:val ...` with
//! strictly ascending zero-based indices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::sparse::{densify, SparseRow, DEFAULT_ABSENT_VALUE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDataset {
    pub rows: Vec<SparseRow>,
    pub y: Vec<f64>,
    pub num_features: usize,
    /// Value held by every feature a row does not list.
    pub absent: f64,
}

impl SparseDataset {
    pub fn densify(&self) -> Result<Matrix> {
        densify(&self.rows, self.num_features, self.absent)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<(f64, SparseRow)> {
    let bad = |msg: String| Error::Data(format!("line {lineno}: {msg}"));
    let mut tokens = line.split_whitespace();
    let label_tok = tokens.next().ok_or_else(|| bad("missing label".into()))?;
    let label: f64 = label_tok
        .parse()
        .map_err(|_| bad(format!("malformed label '{label_tok}'")))?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| bad(format!("malformed token '{tok}'")))?;
        let i: usize = i.parse().map_err(|_| bad(format!("malformed index in '{tok}'")))?;
        let v: f64 = v.parse().map_err(|_| bad(format!("malformed value in '{tok}'")))?;
        if let Some(&prev) = indices.last() {
            if i <= prev {
                return Err(bad(format!("index {i} after {prev}: indices must ascend without duplicates")));
            }
        }
        if !v.is_finite() {
            return Err(bad(format!("non-finite value in '{tok}'")));
        }
        indices.push(i);
        values.push(v);
    }
    Ok((label, SparseRow { indices, values }))
}

/// Parses sparse text. Without `num_features` the width is one past the
/// largest index seen.
pub fn parse_sparse(text: &str, num_features: Option<usize>) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (label, row) = parse_line(line, k + 1)?;
        y.push(label);
        rows.push(row);
    }
    let seen = rows
        .iter()
        .filter_map(|r| r.indices.last())
        .max()
        .map_or(0, |&i| i + 1);
    let d = match num_features {
        Some(d) if d < seen => {
            return Err(Error::Data(format!("index {} exceeds declared width {d}", seen - 1)))
        }
        Some(d) => d,
        None => seen,
    };
    Ok(SparseDataset {
        rows,
        y,
        num_features: d,
        absent: DEFAULT_ABSENT_VALUE,
    })
}

pub fn load_sparse(path: impl AsRef<Path>, num_features: Option<usize>) -> Result<SparseDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sparse(&text, num_features).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_sparse(data: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, y) in data.rows.iter().zip(&data.y) {
        out.push_str(&y.to_string());
        for (i, v) in row.indices.iter().zip(&row.values) {
            out.push_str(&format!(" {i}:{v}"));
        }
        out.push('\n');
    }
    out
}

/// Heuristic used by the CLI to pick a loader: the first data line has a
/// token containing ':'.
pub fn looks_sparse(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .is_some_and(|l| l.split_whitespace().skip(1).any(|t| t.contains(':')) || {
            let toks: Vec<&str> = l.split_whitespace().collect();
            toks.len() == 1 && !l.contains(',')
        })
}
