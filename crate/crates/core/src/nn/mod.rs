//! Tensor autodiff kernel, network blocks, model weights and optimizer.

pub mod adam;
pub mod blocks;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod quant;
pub mod tensor;
pub mod weights;

#[cfg(test)]
mod tests;

pub use graph::{Graph, Gradients, Mask, Var};
pub use model::{Network, NetworkConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
pub use weights::ModelWeights;
