//! Minimal differentiable-computation kit used by the racing agents.
//!
//! Tensors are batch-first and row-major. Image tensors use `[N, H, W, C]`
//! layout. A [`Network`] is an ordered list of [`LayerSpec`]s over a flat
//! parameter vector; [`Network::forward`] keeps the activations that
//! [`Network::backward`] needs to produce exact reverse-mode gradients.

mod error;
#[cfg(any(test, feature = "oracle"))]
pub mod gradcheck;
pub mod io;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use error::NnError;
pub use layer::{depth_to_space, space_to_depth, LayerSpec};
pub use loss::mse_loss;
pub use network::{Activations, Gradients, Network};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

pub type Result<T, E = NnError> = std::result::Result<T, E>;
