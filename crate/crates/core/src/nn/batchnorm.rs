use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Mode;
use crate::tensors::{join, Role, TensorMut, TensorRef, Tensors};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, the value folded into the running estimate.
    pub batch_var_unbiased: Vec<f64>,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, BatchNormCache)> {
        let width = self.width();
        if x.cols() != width {
            return Err(Error::dim("batchnorm forward", width, x.cols()));
        }
        let n = x.rows();
        let (mean, var_biased, var_unbiased) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::Batch(format!(
                        "batch-norm needs at least 2 rows in training, got {n}"
                    )));
                }
                let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n as f64).collect();
                let mut ss = vec![0.0; width];
                for row in x.data().chunks_exact(width) {
                    for ((s, v), m) in ss.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                let biased = ss.iter().map(|s| s / n as f64).collect();
                let unbiased = ss.iter().map(|s| s / (n - 1) as f64).collect();
                (mean, biased, unbiased)
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.clone(),
                self.running_var.clone(),
            ),
        };
        let inv_std: Vec<f64> = var_biased
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut xhat = Matrix::zeros(n, width);
        let mut out = Matrix::zeros(n, width);
        for r in 0..n {
            let src = x.row(r);
            let xh = xhat.row_mut(r);
            for c in 0..width {
                xh[c] = (src[c] - mean[c]) * inv_std[c];
            }
            let dst = out.row_mut(r);
            let xh = xhat.row(r);
            for c in 0..width {
                dst[c] = self.gamma[c] * xh[c] + self.beta[c];
            }
        }
        Ok((
            out,
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: var_unbiased,
                mode,
            },
        ))
    }

    /// Input gradient; gamma/beta gradients are accumulated into `grads`.
    pub fn backward_into(
        &self,
        cache: &BatchNormCache,
        grad_out: &Matrix,
        grads: &mut BatchNormState,
    ) -> Result<Matrix> {
        cache.xhat.check_same_shape(grad_out, "batchnorm backward")?;
        let (n, width) = grad_out.shape();
        let mut sum_g = vec![0.0; width];
        let mut sum_gx = vec![0.0; width];
        for r in 0..n {
            let g = grad_out.row(r);
            let xh = cache.xhat.row(r);
            for c in 0..width {
                sum_g[c] += g[c];
                sum_gx[c] += g[c] * xh[c];
            }
        }
        for c in 0..width {
            grads.gamma[c] += sum_gx[c];
            grads.beta[c] += sum_g[c];
        }
        let mut gin = Matrix::zeros(n, width);
        match cache.mode {
            Mode::Eval => {
                for r in 0..n {
                    let g = grad_out.row(r);
                    let dst = gin.row_mut(r);
                    for c in 0..width {
                        dst[c] = g[c] * self.gamma[c] * cache.inv_std[c];
                    }
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for r in 0..n {
                    let g = grad_out.row(r);
                    let xh = cache.xhat.row(r);
                    let dst = gin.row_mut(r);
                    for c in 0..width {
                        // dxhat = g·gamma; the two sums scale the same way.
                        let k = self.gamma[c] * cache.inv_std[c] / nf;
                        dst[c] = k * (nf * g[c] - sum_g[c] - xh[c] * sum_gx[c]);
                    }
                }
            }
        }
        Ok(gin)
    }

    /// Exponential moving average update from a training-mode cache.
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for c in 0..self.width() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * cache.batch_var_unbiased[c];
        }
    }

    pub fn zeros_like(&self) -> Self {
        let w = self.width();
        Self {
            gamma: vec![0.0; w],
            beta: vec![0.0; w],
            running_mean: vec![0.0; w],
            running_var: vec![0.0; w],
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

impl Tensors for BatchNormState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        let w = self.width();
        let entries: [(&str, Role, &Vec<f64>); 4] = [
            ("gamma", Role::NormScale, &self.gamma),
            ("beta", Role::NormShift, &self.beta),
            ("running_mean", Role::RunningMean, &self.running_mean),
            ("running_var", Role::RunningVar, &self.running_var),
        ];
        for (name, role, data) in entries {
            f(TensorRef {
                name: join(prefix, name),
                shape: vec![w],
                role,
                data,
            });
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        let w = self.width();
        let entries: [(&str, Role, &mut Vec<f64>); 4] = [
            ("gamma", Role::NormScale, &mut self.gamma),
            ("beta", Role::NormShift, &mut self.beta),
            ("running_mean", Role::RunningMean, &mut self.running_mean),
            ("running_var", Role::RunningVar, &mut self.running_var),
        ];
        for (name, role, data) in entries {
            f(TensorMut {
                name: join(prefix, name),
                shape: vec![w],
                role,
                data,
            });
        }
    }
}

/// Forward pass returning the updated running statistics alongside the output,
/// and the input/parameter gradients when `grad_out` is supplied.
pub fn batchnorm_fwd_bwd(
    input: &Matrix,
    state: &BatchNormState,
    mode: Mode,
    grad_out: Option<&Matrix>,
) -> Result<(Matrix, Option<(Matrix, BatchNormState)>, BatchNormState)> {
    let (out, cache) = state.forward(input, mode)?;
    let grads = match grad_out {
        None => None,
        Some(g) => {
            let mut acc = state.zeros_like();
            let gin = state.backward_into(&cache, g, &mut acc)?;
            Some((gin, acc))
        }
    };
    let mut updated = state.clone();
    updated.update_running(&cache);
    Ok((out, grads, updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::central_difference;

    #[test]
    fn normalized_column_is_unchanged() {
        // Column with mean 0 and biased variance 1.
        let x = Matrix::column(&[-1.0, 1.0, -1.0, 1.0]);
        let st = BatchNormState::new(1);
        let (out, _, _) = batchnorm_fwd_bwd(&x, &st, Mode::Train, None).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64 * 1.7 - 3.0);
        let mut st = BatchNormState::new(2);
        st.gamma = vec![0.0, 0.0];
        st.beta = vec![3.0, 3.0];
        for mode in [Mode::Train, Mode::Eval] {
            let (out, _, _) = batchnorm_fwd_bwd(&x, &st, mode, None).unwrap();
            assert!(out.data().iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn single_row_training_batch_is_rejected() {
        let st = BatchNormState::new(3);
        assert!(matches!(
            st.forward(&Matrix::zeros(1, 3), Mode::Train),
            Err(Error::Batch(_))
        ));
        assert!(st.forward(&Matrix::zeros(1, 3), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Matrix::column(&[1.0, 3.0]);
        let st = BatchNormState::new(1);
        let (_, _, upd) = batchnorm_fwd_bwd(&x, &st, Mode::Train, None).unwrap();
        assert!((upd.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased var of [1,3] is 2
        assert!((upd.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
        let (_, _, same) = batchnorm_fwd_bwd(&x, &st, Mode::Eval, None).unwrap();
        assert_eq!(same, st);
    }

    #[test]
    fn eval_identity_with_default_stats() {
        let x = Matrix::from_fn(3, 2, |r, c| r as f64 - c as f64);
        let st = BatchNormState::new(2);
        let (out, _) = st.forward(&x, Mode::Eval).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 1.3).sin() * 2.0);
        let mut st = BatchNormState::new(3);
        st.gamma = vec![0.7, -1.2, 1.5];
        st.beta = vec![0.1, 0.2, -0.3];
        let probe = Matrix::from_fn(4, 3, |r, c| ((r + 3 * c) as f64 * 0.9).cos());
        let loss = |s: &BatchNormState, x: &Matrix| -> f64 {
            let (o, _) = s.forward(x, Mode::Train).unwrap();
            o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (_, grads, _) = batchnorm_fwd_bwd(&x, &st, Mode::Train, Some(&probe)).unwrap();
        let (gin, gparams) = grads.unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let nx = central_difference(x.data(), h, |t| loss(&st, &Matrix::new(4, 3, t.to_vec()).unwrap()));
        for (a, n) in gin.data().iter().zip(&nx) {
            assert!(rel(*a, *n) < 1e-5, "input grad {a} vs {n}");
        }
        let theta = st.flatten_trainable();
        let np = central_difference(&theta, h, |t| {
            let mut s = st.clone();
            s.assign_trainable(t);
            loss(&s, &x)
        });
        let analytic = gparams.flatten_trainable();
        for (a, n) in analytic.iter().zip(&np) {
            assert!(rel(*a, *n) < 1e-5, "param grad {a} vs {n}");
        }
    }
}
