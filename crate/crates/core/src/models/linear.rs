use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::LinearLayer;
use crate::tensors::{TensorMut, TensorRef, Tensors};

/// `logits = x·W + b`. As a GAM its shape functions are `x_i ↦ x_i·w_il`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub layer: LinearLayer,
}

impl LinearParams {
    pub fn new<R: Rng + ?Sized>(d: usize, c: usize, rng: &mut R) -> Self {
        Self {
            layer: LinearLayer::init_output(d, c, rng),
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        Ok(Self {
            layer: LinearLayer::new(weights, bias)?,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.layer.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.layer.bias
    }

    pub fn num_features(&self) -> usize {
        self.layer.fan_in()
    }

    pub fn num_outputs(&self) -> usize {
        self.layer.fan_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer: self.layer.zeros_like(),
        }
    }
}

pub fn linear_model_forward(x: &Matrix, params: &LinearParams) -> Result<Matrix> {
    if x.cols() != params.num_features() {
        return Err(Error::dim("linear model input", params.num_features(), x.cols()));
    }
    params.layer.forward(x)
}

pub fn linear_model_backward(
    x: &Matrix,
    params: &LinearParams,
    grad_logits: &Matrix,
) -> Result<LinearParams> {
    let mut grads = params.zeros_like();
    params
        .layer
        .backward_into(x, grad_logits, &mut grads.layer, false)?;
    Ok(grads)
}

impl Tensors for LinearParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        self.layer.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.layer.visit_mut(prefix, f);
    }
}
