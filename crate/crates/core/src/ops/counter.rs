//! Structural op counter.
//!
//! Convolution kernels record each invocation and its multiply-add FLOPs in
//! thread-local counters. Tests and the benchmark use this to assert which
//! operators a code path actually executed.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub conv2d_calls: u64,
    pub conv3d_calls: u64,
    pub conv2d_flops: u64,
    pub conv3d_flops: u64,
}

impl OpCounts {
    pub fn total_flops(&self) -> u64 {
        self.conv2d_flops + self.conv3d_flops
    }

    fn minus(self, earlier: OpCounts) -> OpCounts {
        OpCounts {
            conv2d_calls: self.conv2d_calls - earlier.conv2d_calls,
            conv3d_calls: self.conv3d_calls - earlier.conv3d_calls,
            conv2d_flops: self.conv2d_flops - earlier.conv2d_flops,
            conv3d_flops: self.conv3d_flops - earlier.conv3d_flops,
        }
    }
}

thread_local! {
    static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts {
        conv2d_calls: 0,
        conv3d_calls: 0,
        conv2d_flops: 0,
        conv3d_flops: 0,
    }) };
}

pub(crate) fn record_conv2d(flops: u64) {
    COUNTS.with(|c| {
        let mut v = c.get();
        v.conv2d_calls += 1;
        v.conv2d_flops += flops;
        c.set(v);
    });
}

pub(crate) fn record_conv3d(flops: u64) {
    COUNTS.with(|c| {
        let mut v = c.get();
        v.conv3d_calls += 1;
        v.conv3d_flops += flops;
        c.set(v);
    });
}

pub fn snapshot() -> OpCounts {
    COUNTS.with(Cell::get)
}

/// Counts ops executed on this thread between `start` and `counts`.
#[derive(Debug)]
pub struct OpScope {
    start: OpCounts,
}

impl OpScope {
    pub fn start() -> Self {
        Self { start: snapshot() }
    }

    pub fn counts(&self) -> OpCounts {
        snapshot().minus(self.start)
    }
}
