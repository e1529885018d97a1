//! A small differentiable-network kernel: dense and 3×3×3 convolution layers,
//! ELU / sigmoid / softmax activations, manual backpropagation and momentum SGD.

mod gradcheck;
mod layers;
mod sgd;
mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use layers::{
    elu, elu_grad, log_sigmoid, sigmoid, softmax_in_place, softplus, Conv3d, Dense, Layer, Parameterized,
    Sequential, ELU_ALPHA, KERNEL,
};
pub use sgd::{sgd_step, Sgd};
pub use tensor::{concat_cols, split_cols, Tensor};
