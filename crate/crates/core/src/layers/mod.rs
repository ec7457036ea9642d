//! Layer descriptors, the sequential network container and its
//! forward/backward passes.

mod kernels;
mod network;
mod spec;

pub use kernels::{col2im, im2col, matmul, matmul_a_bt, matmul_at_b, ConvGeometry};
pub use network::{ForwardPass, Gradients, Mode, Network, Param, TapeEntry};
pub use spec::{infer_shapes, make_tiny_cnn_spec, make_vgg16_spec, LayerKind, LayerSpec};
