//! The model family. Every variant is an additive model: logits are an
//! offset plus per-feature (and, for the pairwise variants, per-pair) shape
//! values mixed by explicit class weights.

pub mod basis;
pub mod count;
pub mod linear;
pub mod nam;
pub mod nbm;
pub mod sparse;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Mode;
use crate::tensors::{TensorMut, TensorRef, Tensors};

pub use basis::BasisBlock;
pub use count::{param_count, suggest_num_bases};
pub use linear::{linear_model_forward, LinearParams};
pub use nam::{nam_forward, nam_forward_naive, GroupedMlp, NamParams};
pub use nbm::{nb2m_forward, nbm_forward, pair_index, Nb2mParams, NbmParams};
pub use sparse::{nbm_sparse_forward, SparseNbm, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    /// One logit, logistic loss.
    Binary,
    Multiclass { classes: usize },
}

impl Task {
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Regression | Task::Binary => 1,
            Task::Multiclass { classes } => classes,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Nam,
    Na2m,
    Nbm,
    Nb2m,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::Nam,
        ModelKind::Na2m,
        ModelKind::Nbm,
        ModelKind::Nb2m,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Nam => "nam",
            ModelKind::Na2m => "na2m",
            ModelKind::Nbm => "nbm",
            ModelKind::Nb2m => "nb2m",
        }
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, ModelKind::Na2m | ModelKind::Nb2m)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}'")))
    }
}

pub const NBM_HIDDEN: [usize; 3] = [256, 128, 128];
pub const NAM_HIDDEN: [usize; 3] = [64, 64, 32];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub num_features: usize,
    pub num_outputs: usize,
    /// Hidden widths of the basis nets (NBM) or per-feature nets (NAM).
    pub hidden: Vec<usize>,
    pub num_bases: usize,
    pub pair_bases: usize,
    pub num_subnets: usize,
    pub batch_norm: bool,
}

impl Architecture {
    /// Library defaults for a model kind.
    pub fn new(kind: ModelKind, num_features: usize, num_outputs: usize) -> Self {
        let hidden = match kind {
            ModelKind::Nam | ModelKind::Na2m => NAM_HIDDEN.to_vec(),
            ModelKind::Nbm | ModelKind::Nb2m => NBM_HIDDEN.to_vec(),
            ModelKind::Linear => Vec::new(),
        };
        Self {
            kind,
            num_features,
            num_outputs,
            hidden,
            num_bases: 100,
            pair_bases: 200,
            num_subnets: 1,
            batch_norm: false,
        }
    }

    pub fn num_pairs(&self) -> usize {
        count::num_pairs(self.num_features)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.num_outputs == 0 {
            return Err(Error::Config("models need at least one feature and one output".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.kind {
            ModelKind::Nam | ModelKind::Na2m if self.num_subnets != 1 => Err(Error::Config(
                "NAM variants have one network per feature; num_subnets must be 1".into(),
            )),
            ModelKind::Nbm | ModelKind::Nb2m
                if self.num_subnets == 0 || self.num_bases == 0 || self.pair_bases == 0 =>
            {
                Err(Error::Config("bases and subnets must be positive".into()))
            }
            k if k.is_pairwise() && self.num_features < 2 => Err(Error::Config(
                "pairwise models need at least two features".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Dropout rates used in training mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    /// Hidden layers of every MLP.
    pub hidden: f64,
    /// Basis channels (NBM variants).
    pub basis: f64,
    /// Whole per-feature contributions (NAM variants).
    pub feature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearParams),
    Nam(NamParams),
    Nbm(NbmParams),
    Nb2m(Nb2mParams),
}

#[derive(Debug, Clone)]
enum Cache {
    Linear(Matrix),
    Nam(nam::NamCache),
    Nbm(nbm::NbmCache),
    Nb2m(nbm::Nb2mCache),
}

/// Output of a forward pass. `shapes` holds `f_i(x_i)` (`n × D`) and
/// `pair_shapes` the pair values (`n × P`), so that
/// `logits = bias + shapes·W (+ pair_shapes·W₂)` holds in eval mode.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Matrix,
    pub shapes: Matrix,
    pub pair_shapes: Option<Matrix>,
    cache: Option<Cache>,
}

impl Forward {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Mixing weights that turn shape values into logits.
#[derive(Debug, Clone, Copy)]
pub struct OutputLayer<'a> {
    pub weights: &'a Matrix,
    pub pair_weights: Option<&'a Matrix>,
    pub bias: &'a [f64],
}

impl Model {
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (d, c) = (arch.num_features, arch.num_outputs);
        Ok(match arch.kind {
            ModelKind::Linear => Model::Linear(LinearParams::new(d, c, rng)),
            ModelKind::Nam | ModelKind::Na2m => Model::Nam(NamParams::new(
                d,
                c,
                &arch.hidden,
                arch.kind == ModelKind::Na2m,
                arch.batch_norm,
                rng,
            )?),
            ModelKind::Nbm => Model::Nbm(NbmParams::new(
                d,
                c,
                &arch.hidden,
                arch.num_bases,
                arch.num_subnets,
                arch.batch_norm,
                rng,
            )?),
            ModelKind::Nb2m => Model::Nb2m(Nb2mParams::new(
                d,
                c,
                &arch.hidden,
                arch.num_bases,
                arch.pair_bases,
                arch.num_subnets,
                arch.batch_norm,
                rng,
            )?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Linear(_) => ModelKind::Linear,
            Model::Nam(p) if p.pair.is_some() => ModelKind::Na2m,
            Model::Nam(_) => ModelKind::Nam,
            Model::Nbm(_) => ModelKind::Nbm,
            Model::Nb2m(_) => ModelKind::Nb2m,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            Model::Linear(p) => p.num_features(),
            Model::Nam(p) => p.num_features(),
            Model::Nbm(p) => p.num_features(),
            Model::Nb2m(p) => p.nbm.num_features(),
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.output_layer().bias.len()
    }

    /// Feature pairs in pair-shape column order, for the pairwise variants.
    pub fn pairs(&self) -> Option<Vec<(usize, usize)>> {
        match self {
            Model::Nam(p) => p.pairs(),
            Model::Nb2m(p) => Some(p.pairs.clone()),
            _ => None,
        }
    }

    /// Architecture recovered from the parameter shapes.
    pub fn architecture(&self) -> Architecture {
        let mut arch = Architecture::new(self.kind(), self.num_features(), self.num_outputs());
        let hidden_of = |net: &crate::nn::Mlp| {
            let w = net.widths();
            w[1..w.len() - 1].to_vec()
        };
        match self {
            Model::Linear(_) => {}
            Model::Nam(p) => {
                arch.hidden = hidden_of(&p.unary.nets[0]);
                arch.batch_norm = p.unary.nets[0].has_batch_norm();
            }
            Model::Nbm(p) => {
                let b = &p.unary;
                arch.hidden = hidden_of(&b.nets[0]);
                arch.num_bases = b.bases_per_net();
                arch.num_subnets = b.nets.len();
                arch.batch_norm = b.nets[0].has_batch_norm();
            }
            Model::Nb2m(p) => {
                let b = &p.nbm.unary;
                arch.hidden = hidden_of(&b.nets[0]);
                arch.num_bases = b.bases_per_net();
                arch.pair_bases = p.pair.bases_per_net();
                arch.num_subnets = b.nets.len();
                arch.batch_norm = b.nets[0].has_batch_norm();
            }
        }
        arch
    }

    pub fn output_layer(&self) -> OutputLayer<'_> {
        match self {
            Model::Linear(p) => OutputLayer {
                weights: p.weights(),
                pair_weights: None,
                bias: p.bias(),
            },
            Model::Nam(p) => OutputLayer {
                weights: &p.weights,
                pair_weights: p.pair.as_ref().map(|q| &q.weights),
                bias: &p.bias,
            },
            Model::Nbm(p) => OutputLayer {
                weights: &p.class_weights,
                pair_weights: None,
                bias: &p.bias,
            },
            Model::Nb2m(p) => OutputLayer {
                weights: &p.nbm.class_weights,
                pair_weights: Some(&p.pair_weights),
                bias: &p.nbm.bias,
            },
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        mode: Mode,
        dropout: Dropout,
        rng: &mut R,
    ) -> Result<Forward> {
        let train = mode == Mode::Train;
        Ok(match self {
            Model::Linear(p) => Forward {
                logits: linear_model_forward(x, p)?,
                shapes: x.clone(),
                pair_shapes: None,
                cache: train.then(|| Cache::Linear(x.clone())),
            },
            Model::Nam(p) => {
                let (logits, shapes, pair_shapes, cache) = nam_forward(x, p, mode, rng, dropout)?;
                Forward {
                    logits,
                    shapes,
                    pair_shapes,
                    cache: cache.map(Cache::Nam),
                }
            }
            Model::Nbm(p) => {
                let (logits, shapes, cache) = nbm_forward(x, p, mode, rng, dropout)?;
                Forward {
                    logits,
                    shapes,
                    pair_shapes: None,
                    cache: cache.map(Cache::Nbm),
                }
            }
            Model::Nb2m(p) => {
                let (logits, shapes, pair_shapes, cache) = nb2m_forward(x, p, mode, rng, dropout)?;
                Forward {
                    logits,
                    shapes,
                    pair_shapes: Some(pair_shapes),
                    cache: cache.map(Cache::Nb2m),
                }
            }
        })
    }

    /// Eval-mode value of pair shape `p` (column order of [`Model::pairs`])
    /// at each row of `z` (`n × 2`).
    pub fn pair_shape(&self, p: usize, z: &Matrix) -> Result<Vec<f64>> {
        let pairs = self
            .pairs()
            .ok_or_else(|| Error::Contract(format!("{} has no pair shapes", self.kind())))?;
        if p >= pairs.len() {
            return Err(Error::dim("pair index", format!("< {}", pairs.len()), p));
        }
        if z.cols() != 2 {
            return Err(Error::dim("pair inputs", "nx2", format!("{}x{}", z.rows(), z.cols())));
        }
        match self {
            Model::Nam(q) => {
                let net = &q.pair.as_ref().expect("pairwise NAM").nets.nets[p];
                Ok(net.predict(z)?.data().to_vec())
            }
            Model::Nb2m(q) => {
                let bases = q.pair.evaluate_bases(z)?;
                let a = q.pair.projection.row(p);
                Ok((0..z.rows()).map(|r| basis::dot(bases.row(r), a)).collect())
            }
            _ => unreachable!("only pairwise models have pairs"),
        }
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut rng = crate::seeded_rng(0);
        Ok(self
            .forward(x, Mode::Eval, Dropout::default(), &mut rng)?
            .logits)
    }

    /// Parameter gradients from a training-mode forward. `grad_shapes` and
    /// `grad_pair_shapes` add gradient directly on the shape values (the
    /// output penalty); the linear model has no parameters behind them.
    pub fn backward(
        &self,
        fwd: &Forward,
        grad_logits: &Matrix,
        grad_shapes: Option<&Matrix>,
        grad_pair_shapes: Option<&Matrix>,
    ) -> Result<Model> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("backward needs a training-mode forward".into()))?;
        Ok(match (self, cache) {
            (Model::Linear(p), Cache::Linear(x)) => {
                Model::Linear(linear::linear_model_backward(x, p, grad_logits)?)
            }
            (Model::Nam(p), Cache::Nam(c)) => Model::Nam(nam::nam_backward(
                p,
                c,
                grad_logits,
                grad_shapes,
                grad_pair_shapes,
            )?),
            (Model::Nbm(p), Cache::Nbm(c)) => {
                Model::Nbm(nbm::nbm_backward(p, c, grad_logits, grad_shapes)?)
            }
            (Model::Nb2m(p), Cache::Nb2m(c)) => Model::Nb2m(nbm::nb2m_backward(
                p,
                c,
                grad_logits,
                grad_shapes,
                grad_pair_shapes,
            )?),
            _ => return Err(Error::Contract("cache belongs to a different model".into())),
        })
    }

    /// Folds batch statistics from a training forward into the running
    /// estimates used in eval mode.
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        match (self, fwd.cache.as_ref()) {
            (Model::Nam(p), Some(Cache::Nam(c))) => p.update_running_stats(c),
            (Model::Nbm(p), Some(Cache::Nbm(c))) => p.update_running_stats(c),
            (Model::Nb2m(p), Some(Cache::Nb2m(c))) => p.update_running_stats(c),
            _ => {}
        }
    }

    pub fn zeros_like(&self) -> Model {
        match self {
            Model::Linear(p) => Model::Linear(p.zeros_like()),
            Model::Nam(p) => Model::Nam(p.zeros_like()),
            Model::Nbm(p) => Model::Nbm(p.zeros_like()),
            Model::Nb2m(p) => Model::Nb2m(p.zeros_like()),
        }
    }
}

impl Tensors for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(TensorRef<'_>)) {
        match self {
            Model::Linear(p) => p.visit(prefix, f),
            Model::Nam(p) => p.visit(prefix, f),
            Model::Nbm(p) => p.visit(prefix, f),
            Model::Nb2m(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        match self {
            Model::Linear(p) => p.visit_mut(prefix, f),
            Model::Nam(p) => p.visit_mut(prefix, f),
            Model::Nbm(p) => p.visit_mut(prefix, f),
            Model::Nb2m(p) => p.visit_mut(prefix, f),
        }
    }
}
