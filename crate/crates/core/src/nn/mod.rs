//! Layers, losses, and the optimizer used by every trainable component.

pub mod activation;
pub mod affine;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod norm;
pub mod optim;
pub mod param;

pub use activation::{relu, sigmoid, sigmoid_scalar, softmax_rows};
pub use affine::{affine_forward, Affine};
pub use gradcheck::finite_difference_check;
pub use loss::{cross_entropy_with_logits, log_loss};
pub use mlp::Mlp;
pub use norm::{BatchNorm, LayerNorm, NormMode};
pub use optim::{Adam, Precision};
pub use param::{Module, Parameter};
