use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::labels_of;
use crate::models::Task;

/// Mean squared error over every entry and its gradient.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.check_same_shape(target, "mse_loss")?;
    let count = pred.data().len().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / count;
    }
    Ok((loss / count, grad))
}

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/n`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim("cross_entropy_loss labels", n, labels.len()));
    }
    if c < 2 {
        return Err(Error::Config("cross-entropy needs at least two classes".into()));
    }
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    let inv_n = 1.0 / n.max(1) as f64;
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Data(format!("label {y} out of range for {c} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut z = 0.0;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            z += *gi;
        }
        loss += z.ln() - (row[y] - max);
        for gi in g.iter_mut() {
            *gi *= inv_n / z;
        }
        g[y] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Mean logistic loss for a single logit column, labels in {0, 1}.
pub fn logistic_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.cols() != 1 || logits.rows() != labels.len() {
        return Err(Error::dim(
            "logistic_loss",
            format!("{}x1", labels.len()),
            format!("{}x{}", logits.rows(), logits.cols()),
        ));
    }
    let inv_n = 1.0 / labels.len().max(1) as f64;
    let mut grad = Matrix::zeros(labels.len(), 1);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Data(format!("binary label {y} is not 0 or 1")));
        }
        let z = logits.get(r, 0);
        // softplus(z) − y·z, computed without overflow.
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        loss += softplus - y as f64 * z;
        let sigma = 1.0 / (1.0 + (-z).exp());
        grad.set(r, 0, (sigma - y as f64) * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Task-appropriate loss against raw targets (class ids stored as floats).
pub fn task_loss(task: Task, logits: &Matrix, y: &[f64]) -> Result<(f64, Matrix)> {
    match task {
        Task::Regression => {
            if logits.cols() != 1 {
                return Err(Error::dim("regression logits", 1, logits.cols()));
            }
            mse_loss(logits, &Matrix::column(y))
        }
        Task::Binary => logistic_loss(logits, &labels_of(y)?),
        Task::Multiclass { .. } => cross_entropy_loss(logits, &labels_of(y)?),
    }
}

/// `η·(1/n)·Σ_b Σ_i f_i(x_b)²` and its gradient `2η·f/n`, where `n` is the
/// batch size (the row count of `shapes`).
pub fn output_penalty(shapes: &Matrix, eta: f64) -> (f64, Option<Matrix>) {
    if eta == 0.0 || shapes.rows() == 0 {
        return (0.0, None);
    }
    let n = shapes.rows() as f64;
    let ss: f64 = shapes.data().iter().map(|v| v * v).sum();
    let mut grad = shapes.clone();
    grad.scale(2.0 * eta / n);
    (eta * ss / n, Some(grad))
}
