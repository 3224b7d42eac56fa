//! Minimal dense-tensor engine.
//!
//! Exactly the kernel set the toy segmentation model and its losses need:
//! 3×3 convolution (stride 1, zero-pad 1), 1×1 convolution, ReLU, per-pixel
//! softmax, masked cross-entropy, and row-wise L2 normalization — each with
//! an analytic backward pass — plus SGD with momentum, weight decay and a
//! polynomial learning-rate schedule.
//!
//! Values are f64 end to end so the finite-difference gradient checks hold
//! at tight tolerances.

mod checkpoint;
mod kernels;
mod optim;
mod tensor;

pub use checkpoint::{read_tensors, write_tensors, MAGIC as CHECKPOINT_MAGIC};
pub use kernels::{
    conv1x1_backward, conv1x1_forward, conv2d_backward, conv2d_forward, cross_entropy,
    l2_normalize_rows, l2_normalize_rows_backward, relu_backward, relu_forward, softmax_pixels,
    CrossEntropyResult,
};
pub use optim::{sgd_step, OptimizerConfig};
pub use tensor::{Parameter, Tensor};
