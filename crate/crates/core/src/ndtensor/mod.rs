//! Dense tensors and the reverse-mode differentiation engine.

mod adam;
pub mod conv;
mod gradcheck;
pub mod ops;
pub mod resample;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_many};
pub use ops::{cosine_sim, gaussian_blur, info_nce, l2_normalize, mae, mse, resize_bicubic, ssim};
pub use tape::{CeItem, Gradients, Tape, Var};
pub use tensor::{apply_separable, gemm, Mat, Real, Tensor};
