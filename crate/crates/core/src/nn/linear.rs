use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix, Trans};
use crate::tensors::{join, Role, TensorMut, TensorRef, Tensors};

/// Affine map `x·W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dim("LinearLayer::new", weight.cols(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    /// Normal init with the given std, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| normal.sample(rng));
        Self {
            weight,
            bias: vec![0.0; fan_out],
        }
    }

    /// `std = sqrt(2/fan_in)`, for layers followed by ReLU.
    pub fn init_hidden<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::init(fan_in, fan_out, (2.0 / fan_in as f64).sqrt(), rng)
    }

    /// `std = sqrt(1/fan_in)`, for output layers.
    pub fn init_output<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::init(fan_in, fan_out, (1.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.fan_in() {
            return Err(Error::dim("linear forward", self.fan_in(), x.cols()));
        }
        let mut out = Matrix::zeros(x.rows(), self.fan_out());
        for row in out.data_mut().chunks_exact_mut(self.fan_out().max(1)) {
            row.copy_from_slice(&self.bias);
        }
        gemm(1.0, x, Trans::No, &self.weight, Trans::No, 1.0, &mut out)?;
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward_into(
        &self,
        x: &Matrix,
        grad_out: &Matrix,
        grads: &mut LinearLayer,
        want_input: bool,
    ) -> Result<Option<Matrix>> {
        if grad_out.rows() != x.rows() || grad_out.cols() != self.fan_out() {
            return Err(Error::dim(
                "linear backward",
                format!("{}x{}", x.rows(), self.fan_out()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        gemm(1.0, x, Trans::Yes, grad_out, Trans::No, 1.0, &mut grads.weight)?;
        for row in grad_out.data().chunks_exact(self.fan_out().max(1)) {
            grads.bias.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        if !want_input {
            return Ok(None);
        }
        let mut gin = Matrix::zeros(x.rows(), self.fan_in());
        gemm(1.0, grad_out, Trans::No, &self.weight, Trans::Yes, 0.0, &mut gin)?;
        Ok(Some(gin))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }
}

impl Tensors for LinearLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        f(TensorRef {
            name: join(prefix, "weight"),
            shape: vec![self.weight.rows(), self.weight.cols()],
            role: Role::Weight,
            data: self.weight.data(),
        });
        f(TensorRef {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &self.bias,
        });
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        let shape = vec![self.weight.rows(), self.weight.cols()];
        f(TensorMut {
            name: join(prefix, "weight"),
            shape,
            role: Role::Weight,
            data: self.weight.data_mut(),
        });
        f(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![self.bias.len()],
            role: Role::Bias,
            data: &mut self.bias,
        });
    }
}

/// Forward pass, plus exact gradients of the affine map when `grad_out` is given.
pub fn linear_fwd_bwd(
    input: &Matrix,
    layer: &LinearLayer,
    grad_out: Option<&Matrix>,
) -> Result<(Matrix, Option<LinearGrads>)> {
    let out = layer.forward(input)?;
    let grads = match grad_out {
        None => None,
        Some(g) => {
            let mut acc = layer.zeros_like();
            let gin = layer
                .backward_into(input, g, &mut acc, true)?
                .expect("input gradient requested");
            Some(LinearGrads {
                input: gin,
                weight: acc.weight,
                bias: acc.bias,
            })
        }
    };
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sums_inputs_with_unit_weights() {
        let layer = LinearLayer::new(Matrix::column(&[1.0, 1.0]), vec![0.0]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (out, _) = linear_fwd_bwd(&x, &layer, None).unwrap();
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn zero_input_passes_bias_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = LinearLayer::init_output(2, 1, &mut rng);
        layer.bias = vec![5.0];
        let (out, _) = linear_fwd_bwd(&Matrix::zeros(1, 2), &layer, None).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn rejects_wrong_fan_in() {
        let layer = LinearLayer::zeros(3, 2);
        assert!(layer.forward(&Matrix::zeros(1, 2)).is_err());
        let g = Matrix::zeros(1, 3);
        assert!(linear_fwd_bwd(&Matrix::zeros(1, 3), &layer, Some(&g)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = LinearLayer::init(3, 4, 0.5, &mut rng);
        let mut layer = layer;
        layer.bias = vec![0.1, -0.2, 0.3, -0.4];
        let x = Matrix::from_fn(5, 3, |r, c| ((r * 3 + c) as f64 * 0.37).sin());
        let probe = Matrix::from_fn(5, 4, |r, c| ((r + 2 * c) as f64 * 0.21).cos());
        // L = Σ probe ⊙ out, so dL/dout = probe.
        let loss = |l: &LinearLayer, x: &Matrix| -> f64 {
            let out = l.forward(x).unwrap();
            out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (_, grads) = linear_fwd_bwd(&x, &layer, Some(&probe)).unwrap();
        let grads = grads.unwrap();

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let theta = layer.flatten_trainable();
        let numeric = central_difference(&theta, h, |t| {
            let mut l = layer.clone();
            l.assign_trainable(t);
            loss(&l, &x)
        });
        let mut analytic = grads.weight.data().to_vec();
        analytic.extend_from_slice(&grads.bias);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
        let numeric_x = central_difference(x.data(), h, |t| {
            loss(&layer, &Matrix::new(5, 3, t.to_vec()).unwrap())
        });
        for (a, n) in grads.input.data().iter().zip(&numeric_x) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
        assert!(worst < 1e-7, "worst relative error {worst}");
    }
}
