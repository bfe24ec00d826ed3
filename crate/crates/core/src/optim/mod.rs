//! Losses, regularizers, AdamW, the cosine schedule and the training loop.

pub mod adamw;
pub mod loss;

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{evaluate, Metric};
use crate::models::{Dropout, Forward, Model, ModelKind, Task};
use crate::nn::activation::check_rate;
use crate::nn::Mode;
use crate::tensors::Tensors;

pub use adamw::{adamw_step, AdamWState};
pub use loss::{cross_entropy_loss, logistic_loss, mse_loss, output_penalty, task_loss};

/// Rows per eval-mode forward when scoring a whole split.
pub const EVAL_CHUNK: usize = 4096;

/// `lr0·½·(1 + cos(π·t/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 || t > total {
        return Err(Error::Contract(format!("cosine schedule step {t} outside 0..={total}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub output_penalty: f64,
    /// Hidden-layer dropout.
    pub dropout: f64,
    pub basis_dropout: f64,
    pub feature_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            lr: 1e-3,
            weight_decay: 0.0,
            output_penalty: 0.0,
            dropout: 0.0,
            basis_dropout: 0.0,
            feature_dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.output_penalty >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("penalties must be non-negative".into()));
        }
        check_rate(self.dropout)?;
        check_rate(self.basis_dropout)?;
        check_rate(self.feature_dropout)
    }

    pub fn dropout(&self) -> Dropout {
        Dropout {
            hidden: self.dropout,
            basis: self.basis_dropout,
            feature: self.feature_dropout,
        }
    }
}

/// Inputs and raw targets (class ids are stored as whole floats).
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(x: &'a Matrix, y: &'a [f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim("samples", x.rows(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// The differentiated training objective: task loss plus the output penalty.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub task: Task,
    pub output_penalty: f64,
    pub dropout: Dropout,
}

/// Training-mode forward, objective value and parameter gradients.
pub fn objective_and_gradient<R: Rng + ?Sized>(
    model: &Model,
    x: &Matrix,
    y: &[f64],
    objective: &Objective,
    rng: &mut R,
) -> Result<(f64, Model, Forward)> {
    let fwd = model.forward(x, Mode::Train, objective.dropout, rng)?;
    let (mut loss, grad_logits) = task_loss(objective.task, &fwd.logits, y)?;
    // The linear model's "shapes" are its inputs, which carry no parameters.
    let eta = if model.kind() == ModelKind::Linear {
        0.0
    } else {
        objective.output_penalty
    };
    let (p1, g1) = output_penalty(&fwd.shapes, eta);
    let (p2, g2) = match &fwd.pair_shapes {
        Some(ps) => output_penalty(ps, eta),
        None => (0.0, None),
    };
    loss += p1 + p2;
    let grads = model.backward(&fwd, &grad_logits, g1.as_ref(), g2.as_ref())?;
    Ok((loss, grads, fwd))
}

/// Eval-mode logits over all rows, in bounded chunks.
pub fn predict_all(model: &Model, x: &Matrix) -> Result<Matrix> {
    if x.rows() <= EVAL_CHUNK {
        return model.predict(x);
    }
    let mut out = Matrix::zeros(x.rows(), model.num_outputs());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let part = model.predict(&x.select_rows(&idx))?;
        for (k, r) in (start..end).enumerate() {
            out.row_mut(r).copy_from_slice(part.row(k));
        }
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation metric.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<Metric>,
}

pub fn write_history<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,train_loss,val_metric")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_metric)?;
    }
    Ok(())
}

pub fn fit(
    model: Model,
    train: Samples<'_>,
    val: Samples<'_>,
    task: Task,
    config: &TrainConfig,
) -> Result<FitResult> {
    fit_observed(model, train, val, task, config, &mut |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_observed(
    mut model: Model,
    train: Samples<'_>,
    val: Samples<'_>,
    task: Task,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let objective = Objective {
        task,
        output_penalty: config.output_penalty,
        dropout: config.dropout(),
    };
    let mut rng = crate::seeded_rng(config.seed);
    let mut state = AdamWState::new(model.trainable_count(), config.lr, config.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Metric, Model)> = None;
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr)?;
        state.lr = lr;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            // A lone trailing row cannot be batch-normalized; it is
            // reshuffled into a full batch next epoch.
            if chunk.len() < 2 && train.len() > 1 {
                continue;
            }
            let x = train.x.select_rows(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| train.y[i]).collect();
            let (loss, grads, fwd) = objective_and_gradient(&model, &x, &y, &objective, &mut rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}"))
                    }
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch}"
                )));
            }
            adamw_step(&mut model, &grads, &mut state).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
                other => other,
            })?;
            model.update_running_stats(&fwd);
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let metric = evaluate(task, &predict_all(&model, val.x)?, val.y)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: total / seen.max(1) as f64,
            val_metric: metric.value,
        };
        observer(&record);
        history.push(record);
        let improved = match &best {
            None => metric.value.is_finite(),
            Some((_, m, _)) => metric.better_than(m.value),
        };
        if improved {
            best = Some((epoch, metric, model.clone()));
        }
    }
    Ok(match best {
        Some((epoch, metric, best_model)) => FitResult {
            model: best_model,
            history,
            best_epoch: Some(epoch),
            best_metric: Some(metric),
        },
        None => FitResult {
            model,
            history,
            best_epoch: None,
            best_metric: None,
        },
    })
}
