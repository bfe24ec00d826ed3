//! End-to-end runs: load, preprocess, split, fit, checkpoint, evaluate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigMap, RunConfig};
use crate::data::sparse::looks_sparse;
use crate::data::{load_sparse, split_indices, Dataset, RawTable, Scaling, Schema, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{evaluate, Metric};
use crate::models::{Model, Task};
use crate::optim::{fit_observed, predict_all, EpochRecord, FitResult};

pub const CHECKPOINT_FORMAT: &str = "nbm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How raw files are turned into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum InputFormat {
    Csv { schema: Schema },
    Sparse { num_features: usize, absent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub input: InputFormat,
    pub scaling: Scaling,
    pub feature_names: Vec<String>,
}

/// A file read under a [`Preprocessing`], before scaling.
#[derive(Debug, Clone)]
pub enum Loaded {
    Dense(Dataset),
    Sparse(crate::data::SparseDataset),
}

fn file_is_sparse(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = String::new();
    std::fs::File::open(path)
        .and_then(|f| f.take(64 * 1024).read_to_string(&mut head))
        .map_err(|e| Error::io(path, e))?;
    Ok(looks_sparse(&head))
}

impl Preprocessing {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Reads `path` in whichever format it is in; sparse files keep their
    /// rows, CSV files are encoded with the fitted schema.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<Loaded> {
        let path = path.as_ref();
        if file_is_sparse(path)? {
            let s = load_sparse(path, Some(self.num_features()))?;
            return Ok(Loaded::Sparse(s));
        }
        match &self.input {
            InputFormat::Csv { schema } => {
                let table = RawTable::read(path)?;
                let rows: Vec<usize> = (0..table.len()).collect();
                Ok(Loaded::Dense(schema.encode(&table, &rows)?))
            }
            InputFormat::Sparse { .. } => Err(Error::Data(format!(
                "{}: model was trained on sparse input; expected 'label idx:val' lines",
                path.display()
            ))),
        }
    }

    /// Scaled dense dataset for `loaded`.
    pub fn dense(&self, loaded: &Loaded) -> Result<Dataset> {
        let raw = match loaded {
            Loaded::Dense(d) => d.clone(),
            Loaded::Sparse(s) => Dataset::new(s.densify()?, s.y.clone(), self.feature_names.clone())?,
        };
        Ok(Dataset {
            x: self.scaling.apply(&raw.x)?,
            ..raw
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub preprocessing: Preprocessing,
    /// Effective configuration of the run that produced the model.
    pub config: ConfigMap,
    pub best_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported checkpoint version {v}"))),
            None => return Err(Error::Checkpoint("missing checkpoint version".into())),
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        ck.verify()?;
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Structural checks a parse alone cannot make.
    fn verify(&self) -> Result<()> {
        let bad = |m: String| Error::Checkpoint(m);
        self.model.architecture().validate().map_err(|e| bad(e.to_string()))?;
        let d = self.model.num_features();
        if d != self.preprocessing.num_features() {
            return Err(bad(format!(
                "model expects {d} features, preprocessing yields {}",
                self.preprocessing.num_features()
            )));
        }
        if self.model.num_outputs() != self.task.num_outputs() {
            return Err(bad("model outputs do not match the task".into()));
        }
        let probe = self
            .model
            .predict(&Matrix::zeros(1, d))
            .map_err(|e| bad(format!("model is inconsistent: {e}")))?;
        if !probe.is_finite() {
            return Err(bad("model produces non-finite outputs".into()));
        }
        Ok(())
    }
}

/// Splits of a prepared dataset, already scaled.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub preprocessing: Preprocessing,
}

/// Loads `run.data`, splits it by `run.split_seed`, and fits the encoding
/// and scaling on the training split only.
pub fn prepare(run: &RunConfig) -> Result<Prepared> {
    let path = run.data.as_path();
    if !path.exists() {
        return Err(Error::Data(format!("dataset not found: {}", path.display())));
    }
    if file_is_sparse(path)? {
        if run.scaling != "none" {
            return Err(Error::Config(
                "sparse input keeps absent features at 0 and needs scaling = none".into(),
            ));
        }
        let s = load_sparse(path, run.num_features)?;
        let names = crate::data::synth::feature_names(s.num_features);
        let all = Dataset::new(s.densify()?, s.y.clone(), names.clone())?;
        check_labels(run.task, &all.y)?;
        let [a, b, c] = split_indices(all.len(), DEFAULT_RATIOS, run.split_seed)?;
        return Ok(Prepared {
            train: all.select(&a),
            val: all.select(&b),
            test: all.select(&c),
            preprocessing: Preprocessing {
                input: InputFormat::Sparse {
                    num_features: s.num_features,
                    absent: s.absent,
                },
                scaling: Scaling::None,
                feature_names: names,
            },
        });
    }
    let table = RawTable::read(path)?;
    let mut schema = Schema::infer(&table.header, &run.target, &run.categorical, &run.drop, run.task)?;
    let [a, b, c] = split_indices(table.len(), DEFAULT_RATIOS, run.split_seed)?;
    schema.fit_vocabularies(&table, &a)?;
    let (train, val, test) = (
        schema.encode(&table, &a)?,
        schema.encode(&table, &b)?,
        schema.encode(&table, &c)?,
    );
    let scaling = Scaling::fit(&run.scaling, &train.x)?;
    let scale = |d: Dataset| -> Result<Dataset> {
        Ok(Dataset {
            x: scaling.apply(&d.x)?,
            ..d
        })
    };
    let feature_names = schema.feature_names();
    Ok(Prepared {
        train: scale(train)?,
        val: scale(val)?,
        test: scale(test)?,
        preprocessing: Preprocessing {
            input: InputFormat::Csv { schema },
            scaling,
            feature_names,
        },
    })
}

fn check_labels(task: Task, y: &[f64]) -> Result<()> {
    let classes = match task {
        Task::Regression => return Ok(()),
        Task::Binary => 2,
        Task::Multiclass { classes } => classes,
    };
    match y.iter().position(|&v| v.fract() != 0.0 || v < 0.0 || v >= classes as f64) {
        Some(r) => Err(Error::Data(format!("row {}: label {} is not a class id below {classes}", r + 1, y[r]))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub fit: FitResult,
    pub prepared: Prepared,
}

/// Prepares data, fits the configured model, and packages the best epoch
/// as a checkpoint.
pub fn train_run(run: &RunConfig, observer: &mut dyn FnMut(&EpochRecord)) -> Result<Trained> {
    let prepared = prepare(run)?;
    train_prepared(run, prepared, observer)
}

pub fn train_prepared(
    run: &RunConfig,
    prepared: Prepared,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Trained> {
    let arch = run.architecture(prepared.train.num_features())?;
    let model = Model::new(&arch, &mut crate::seeded_rng(run.train.seed))?;
    let fit = fit_observed(
        model,
        prepared.train.samples(),
        prepared.val.samples(),
        run.task,
        &run.train,
        observer,
    )?;
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        task: run.task,
        preprocessing: prepared.preprocessing.clone(),
        config: run.to_map(),
        best_epoch: fit.best_epoch,
        best_val_metric: fit.best_metric.map(|m| m.value),
        model: fit.model.clone(),
    };
    Ok(Trained {
        checkpoint,
        fit,
        prepared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub higher_is_better: bool,
    pub rows: usize,
    pub model_kind: String,
    /// Whether the sparse inference path was used.
    pub sparse_path: bool,
}

/// Eval-mode logits for a loaded file; NBM on unscaled sparse input takes
/// the sparse path.
pub fn predict_loaded(ck: &Checkpoint, loaded: &Loaded) -> Result<(Matrix, bool)> {
    if let (Loaded::Sparse(s), Model::Nbm(p), Scaling::None) = (loaded, &ck.model, &ck.preprocessing.scaling) {
        let absent = match ck.preprocessing.input {
            InputFormat::Sparse { absent, .. } => absent,
            InputFormat::Csv { .. } => s.absent,
        };
        if absent == s.absent {
            let mut out = Matrix::zeros(s.len(), ck.model.num_outputs());
            let sparse = crate::models::sparse::SparseNbm::new(p, absent)?;
            let mut start = 0;
            while start < s.len() {
                let end = (start + crate::optim::EVAL_CHUNK).min(s.len());
                let part = sparse.forward(&s.rows[start..end])?;
                for (k, r) in (start..end).enumerate() {
                    out.row_mut(r).copy_from_slice(part.row(k));
                }
                start = end;
            }
            return Ok((out, true));
        }
    }
    let d = ck.preprocessing.dense(loaded)?;
    Ok((predict_all(&ck.model, &d.x)?, false))
}

pub fn evaluate_file(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<EvalReport> {
    let loaded = ck.preprocessing.load(path)?;
    let y = match &loaded {
        Loaded::Dense(d) => d.y.clone(),
        Loaded::Sparse(s) => s.y.clone(),
    };
    check_labels(ck.task, &y)?;
    let (logits, sparse_path) = predict_loaded(ck, &loaded)?;
    let Metric {
        name,
        value,
        higher_is_better,
    } = evaluate(ck.task, &logits, &y)?;
    Ok(EvalReport {
        metric: name.to_string(),
        value,
        higher_is_better,
        rows: y.len(),
        model_kind: ck.model.kind().name().to_string(),
        sparse_path,
    })
}
