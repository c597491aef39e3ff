//! Minimal reverse-mode automatic differentiation and small convolutional
//! networks, with Adam (cosine-decayed) and optional spectral normalization.

mod checkpoint;
mod net;
mod optim;
mod tape;

pub use checkpoint::{load_nets, save_nets};
pub use net::{
    conv_linear, conv_linear_transpose, forward_net, lipschitz_estimate, spectral_normalize,
    ConvLayer, NetBinding, NetConfig, NetParams, SpectralState,
};
pub use optim::{adam_step, OptimState};
pub use tape::{vjp, DiffTensor, Gradients, Tape};
