//! CSV ingestion: comma-separated, UTF-8, header row, `.` decimals.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::Task;

/// Header plus raw cells, exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Data("empty file: no header row".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("line {}: {e}", i + 2)))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Numeric,
    Categorical,
    Target,
}

/// Column roles, task, and categorical vocabularies (fitted on training rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<(String, ColumnRole)>,
    pub task: Task,
    pub vocabularies: BTreeMap<String, Vec<String>>,
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Data(format!("line {line}, column '{column}': cannot parse '{cell}' as a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("line {line}, column '{column}': non-finite value '{cell}'")));
    }
    Ok(v)
}

impl Schema {
    /// Every column except `target` and `drop` is a feature; those listed in
    /// `categorical` are one-hot encoded.
    pub fn infer(
        header: &[String],
        target: &str,
        categorical: &[String],
        drop: &[String],
        task: Task,
    ) -> Result<Self> {
        if !header.iter().any(|h| h == target) {
            return Err(Error::Data(format!("missing target column '{target}'")));
        }
        for name in categorical.iter().chain(drop) {
            if !header.contains(name) {
                return Err(Error::Data(format!("missing column '{name}'")));
            }
        }
        let columns = header
            .iter()
            .filter(|h| !drop.contains(h))
            .map(|h| {
                let role = if h == target {
                    ColumnRole::Target
                } else if categorical.contains(h) {
                    ColumnRole::Categorical
                } else {
                    ColumnRole::Numeric
                };
                (h.clone(), role)
            })
            .collect();
        Ok(Self {
            columns,
            task,
            vocabularies: BTreeMap::new(),
        })
    }

    pub fn target(&self) -> &str {
        self.columns
            .iter()
            .find(|(_, r)| *r == ColumnRole::Target)
            .map(|(n, _)| n.as_str())
            .expect("schema has a target")
    }

    pub fn validate(&self) -> Result<()> {
        let targets = self.columns.iter().filter(|(_, r)| *r == ColumnRole::Target).count();
        if targets != 1 {
            return Err(Error::Config(format!("schema needs exactly one target, found {targets}")));
        }
        Ok(())
    }

    /// Sorted distinct values of every categorical column over `rows`.
    pub fn fit_vocabularies(&mut self, table: &RawTable, rows: &[usize]) -> Result<()> {
        self.vocabularies.clear();
        for (name, role) in &self.columns {
            if *role != ColumnRole::Categorical {
                continue;
            }
            let c = table.column(name)?;
            let mut vocab: Vec<String> = rows.iter().map(|&r| table.rows[r][c].clone()).collect();
            vocab.sort();
            vocab.dedup();
            self.vocabularies.insert(name.clone(), vocab);
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, role) in &self.columns {
            match role {
                ColumnRole::Numeric => names.push(name.clone()),
                ColumnRole::Categorical => {
                    for v in self.vocabularies.get(name).into_iter().flatten() {
                        names.push(format!("{name}={v}"));
                    }
                }
                ColumnRole::Target => {}
            }
        }
        names
    }

    /// Encodes the given rows. Categories outside the vocabulary become an
    /// all-zero block.
    pub fn encode(&self, table: &RawTable, rows: &[usize]) -> Result<Dataset> {
        self.validate()?;
        let index: Vec<usize> = self
            .columns
            .iter()
            .map(|(n, _)| table.column(n))
            .collect::<Result<_>>()?;
        let names = self.feature_names();
        let width = names.len();
        let mut x = Matrix::zeros(rows.len(), width);
        let mut y = Vec::with_capacity(rows.len());
        for (out_r, &r) in rows.iter().enumerate() {
            let line = r + 2;
            let cells = &table.rows[r];
            let dst = x.row_mut(out_r);
            let mut off = 0;
            for ((name, role), &c) in self.columns.iter().zip(&index) {
                let cell = cells[c].as_str();
                match role {
                    ColumnRole::Numeric => {
                        dst[off] = parse_cell(cell, line, name)?;
                        off += 1;
                    }
                    ColumnRole::Categorical => {
                        let vocab = self.vocabularies.get(name).ok_or_else(|| {
                            Error::Contract(format!("vocabulary for '{name}' was never fitted"))
                        })?;
                        if let Ok(k) = vocab.binary_search_by(|v| v.as_str().cmp(cell)) {
                            dst[off + k] = 1.0;
                        }
                        off += vocab.len();
                    }
                    ColumnRole::Target => {
                        let v = parse_cell(cell, line, name)?;
                        if self.task.is_classification() {
                            let classes = match self.task {
                                Task::Multiclass { classes } => classes,
                                _ => 2,
                            };
                            if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                                return Err(Error::Data(format!(
                                    "line {line}: label '{cell}' is not a class id below {classes}"
                                )));
                            }
                        }
                        y.push(v);
                    }
                }
            }
        }
        Dataset::new(x, y, names)
    }
}

/// Loads a CSV under `schema`. Vocabularies not yet fitted are fitted on
/// every row of this file.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let table = RawTable::read(path)?;
    let rows: Vec<usize> = (0..table.len()).collect();
    let needs_fit = schema
        .columns
        .iter()
        .any(|(n, r)| *r == ColumnRole::Categorical && !schema.vocabularies.contains_key(n));
    if needs_fit {
        let mut s = schema.clone();
        s.fit_vocabularies(&table, &rows)?;
        s.encode(&table, &rows)
    } else {
        schema.encode(&table, &rows)
    }
}

/// Writes features then target, with shortest round-trip float formatting.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, target: &str) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        let mut header = data.feature_names.clone();
        header.push(target.to_string());
        writeln!(w, "{}", header.join(","))?;
        for r in 0..data.len() {
            for v in data.x.row(r) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", data.y[r])?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
