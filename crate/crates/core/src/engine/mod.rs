//! Numeric core: tensors, differentiable layers, loss, and the optimiser.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod network;
pub mod pool;
pub(crate) mod real;
pub mod tensor;

pub use activation::{activations, Activation};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use conv::{conv_backward, conv_forward, ConvGeometry, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{cross_entropy_loss, cross_entropy_with_grad, softmax_cross_entropy_logit_grad};
pub use network::{Layer, LayerSpec, Model, Network, NetworkBuilder, Param, Tape};
pub use pool::{maxpool_backward, maxpool_forward, Pooled};
pub use real::{Precision, Real};
pub use tensor::Tensor;
