//! Desk-scale surround-view 3D occupancy prediction.
//!
//! Two head paths share one trunk (image encoder, view transform, temporal
//! fusion, BEV encoder):
//!
//! * **flash**: 2D convolutions on the BEV feature, then a channel-to-height
//!   reshape of `C*·Z` channels into `[C*, Z]` logits;
//! * **voxel**: the BEV feature is split into `Z` height slices and processed
//!   by 3D convolutions.
//!
//! The [`scene`] module generates synthetic worlds with exact ground truth,
//! [`eval`] scores predictions by mIoU, and [`bench`] compares the two paths
//! by latency, analytic FLOPs and peak live tensor bytes.

pub mod bench;
pub mod bev_encoder;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod init;
pub mod ops;
pub mod pipeline;
pub mod scene;
pub mod selftest;
pub mod temporal;
pub mod tensor;
pub mod view_transform;

pub use error::{Error, Result};
pub use tensor::Tensor;
