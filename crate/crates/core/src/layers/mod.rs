//! Batch norm, activations, dropout, the loss and the optimizer.

use serde::{Deserialize, Serialize};

mod activation;
mod adam;
mod batchnorm;
mod loss;

pub use activation::{dropout, dropout_backward, relu, relu_backward, DropoutSpec};
pub use adam::{Adam, AdamConfig, ParamUpdate};
pub use batchnorm::{batchnorm3d, BatchNorm, BnCache, BnGrads, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use loss::{bce_with_logits, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
