//! Lightweight selective-attention underwater image enhancement.
//!
//! The crate bundles everything needed to build, train and score the model:
//!
//! * [`tensor`] and [`autodiff`]: a small deterministic tensor engine with
//!   reverse-mode differentiation over exactly the operations the model uses.
//! * [`optim`]: Adam.
//! * [`model`]: the enhancer itself, which predicts a compensation image and an
//!   over-exposure attenuation image and combines them with the raw input.
//! * [`physics`]: the underwater image-formation simulator and a dark-channel
//!   prior restorer.
//! * [`metrics`]: PSNR, SSIM, UIQM (with UICM/UISM/UIConM) and UCIQE.
//! * [`pipeline`]: datasets, training, checkpoints, evaluation, ablations and
//!   histogram reports.

pub mod autodiff;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod physics;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
pub use model::{Ablation, Decomposition, LsNet, LsNetConfig, LsNetParams, RoutingIndex};
pub use tensor::{Real, Tensor};
