//! Dense `f64` tensors and define-by-run reverse-mode differentiation.

pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use ops::{
    adaptive_avg_pool, bilinear_resize2d, conv1d, conv2d_patches, conv_out_len, layer_norm,
    matmul, softmax_rows,
};
pub use tape::{GradFault, Gradients, Tape, Var};
pub use tensor::Tensor;
