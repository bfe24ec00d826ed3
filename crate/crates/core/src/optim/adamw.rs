use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::Tensors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr,
            weight_decay,
        }
    }

    pub fn for_params<T: Tensors>(params: &T, lr: f64, weight_decay: f64) -> Self {
        Self::new(params.trainable_count(), lr, weight_decay)
    }

    fn update(&mut self, offset: usize, param: &mut [f64], grad: &[f64], decays: bool) {
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = if decays { self.weight_decay } else { 0.0 };
        let m = &mut self.m[offset..offset + param.len()];
        let v = &mut self.v[offset..offset + param.len()];
        for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * (mhat / (vhat.sqrt() + self.epsilon) + decay * *p);
        }
    }

    fn begin(&mut self, grads: &[f64]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::dim("AdamW gradient length", self.m.len(), grads.len()));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} at parameter {i}; step aborted",
                grads[i]
            )));
        }
        self.t += 1;
        Ok(())
    }

    /// One step on a flat parameter vector; `decays` selects decoupled decay.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], decays: bool) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("AdamW parameters", grads.len(), params.len()));
        }
        self.begin(grads)?;
        self.update(0, params, grads, decays);
        Ok(())
    }
}

/// Adam with decoupled weight decay. Decay touches only weight matrices —
/// never biases, output offsets, or batch-norm scale and shift.
pub fn adamw_step<T: Tensors>(params: &mut T, grads: &T, state: &mut AdamWState) -> Result<()> {
    let flat = grads.flatten_trainable();
    state.begin(&flat)?;
    let mut offset = 0;
    params.visit_mut("", &mut |t| {
        if t.role.trainable() {
            let n = t.data.len();
            state.update(offset, t.data, &flat[offset..offset + n], t.role.decays());
            offset += n;
        }
    });
    Ok(())
}
