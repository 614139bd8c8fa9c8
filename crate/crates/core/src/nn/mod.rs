//! Dense tensors, layers, the Q-network and its optimizer.

pub mod adam;
pub mod kernels;
pub mod layers;
pub mod qnet;

pub use adam::{adam_step, OptimizerState};
pub use layers::{
    conv2d_backward, conv2d_forward, huber_loss, linear_backward, linear_forward, relu_backward, relu_forward,
    ConvGrads, ConvLayerSpec, LinearGrads,
};
pub use qnet::{init_network, Gradients, InputSpec, ParamGroup, QNetwork, QNetworkSpec};
