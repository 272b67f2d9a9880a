//! Logical tensor-byte accounting.
//!
//! Every [`Tensor`](super::Tensor) registers its byte size with a
//! thread-local counter when it is created and releases it when dropped.
//! The counter tracks the current live total and the running peak, which is
//! what the benchmark reports as "peak tensor bytes". Scratch buffers inside
//! kernels are plain `Vec`s and are not counted.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn register(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn release(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes held by tensors currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// Highest value of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Resets the peak to the current live total.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|peak| peak.set(live));
}

/// Measures the peak live bytes over a region of code.
///
/// The peak includes tensors that were already alive when the scope started.
#[derive(Debug)]
pub struct MemoryScope {
    baseline: usize,
}

impl MemoryScope {
    pub fn start() -> Self {
        reset_peak();
        Self {
            baseline: live_bytes(),
        }
    }

    /// Live bytes at the moment the scope began.
    pub fn baseline(&self) -> usize {
        self.baseline
    }

    /// Peak live bytes observed since the scope began.
    pub fn peak(&self) -> usize {
        peak_bytes()
    }
}
