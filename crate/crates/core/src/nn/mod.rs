//! Minimal reverse-mode autodiff, layers, Adam and checkpoints.

mod adam;
pub mod checkpoint;
mod graph;
mod kernels;
mod layers;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Conv2d, ConvTranspose2d, Mlp};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
