//! Uniform access to every array a model owns, in a fixed order. Optimizers,
//! checkpoints and parameter counting all walk models through this trait.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn trainable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }

    /// Decoupled weight decay touches weight matrices only.
    pub fn decays(self) -> bool {
        self == Role::Weight
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub data: &'a mut [f64],
}

pub trait Tensors {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>));

    /// Number of learnable scalars.
    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |t| {
            if t.role.trainable() {
                n += t.data.len();
            }
        });
        n
    }

    /// Trainable values concatenated in visit order.
    fn flatten_trainable(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |t| {
            if t.role.trainable() {
                out.extend_from_slice(t.data);
            }
        });
        out
    }

    /// Inverse of [`Tensors::flatten_trainable`].
    fn assign_trainable(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut("", &mut |t| {
            if t.role.trainable() {
                let n = t.data.len();
                t.data.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
