//! Dense layers with hand-written forward/backward rules. Every model in this
//! crate is a fixed composition of these pieces, so there is no tape.

pub mod activation;
pub mod batchnorm;
pub mod gradcheck;
pub mod linear;
pub mod mlp;

use serde::{Deserialize, Serialize};

pub use activation::{dropout_fwd, relu_fwd_bwd};
pub use batchnorm::{batchnorm_fwd_bwd, BatchNormState};
pub use gradcheck::gradient_check;
pub use linear::{linear_fwd_bwd, LinearLayer};
pub use mlp::{mlp_fwd_bwd, mlp_param_count, HiddenLayer, Mlp, MlpCache};

/// Switches dropout and batch-norm behaviour; nothing else depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}
