//! Tensor kernels: convolution, normalization, activation, resampling.

pub mod conv;
pub mod counter;
pub mod elementwise;
pub mod resample;

use std::sync::atomic::{AtomicBool, Ordering};

pub use conv::{conv2d, conv3d, conv3d_raw, Conv2dParams, Conv3dParams};
pub use elementwise::{
    batch_norm_inference, batch_norm_inplace, batch_norm_with, relu, relu_inplace, softmax_axis,
    BatchNormParams,
};
pub use resample::upsample2x_bilinear;

static PARALLEL: AtomicBool = AtomicBool::new(false);

/// Whether convolution tiles are spread over the rayon pool. Off by default;
/// results are bit-identical either way.
pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

/// Sets the parallel flag and restores the previous value on drop.
#[derive(Debug)]
pub struct ParallelGuard {
    previous: bool,
}

impl ParallelGuard {
    pub fn set(on: bool) -> Self {
        let previous = parallel_enabled();
        set_parallel(on);
        Self { previous }
    }
}

impl Drop for ParallelGuard {
    fn drop(&mut self) {
        set_parallel(self.previous);
    }
}
