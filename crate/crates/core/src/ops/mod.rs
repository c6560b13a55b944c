//! Differentiable kernels with hand-written backward passes.

pub mod conv;
pub mod linear;
pub mod pool;

pub use conv::{conv3d_backward, conv3d_backward_with, conv3d_forward, conv3d_reference, ConvGrads, ConvSpec};
pub use linear::{linear, linear_backward, LinearGrads};
pub use pool::{pool3d, pool3d_backward, PoolMode};
