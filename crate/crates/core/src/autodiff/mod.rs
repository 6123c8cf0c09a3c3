//! Reverse-mode differentiation over dense f64 tensors, restricted to the
//! operations the reconstruction network uses, plus AdamW and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Graph, Var};
pub use ops::{SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use optim::{AdamW, AdamWConfig, CosineSchedule};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
