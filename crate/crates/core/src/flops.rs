//! Explicit floating-point operation counters.
//!
//! Counters are bumped at the call sites that dominate cost (dual-activation
//! evaluations, matrix-vector products, factorizations) rather than read from
//! hardware, so the counts are reproducible across machines.

use std::sync::atomic::{AtomicU64, Ordering};

/// Cost charged for one closed-form ReLU expectation (sqrt, acos and a
/// handful of multiply-adds).
pub const EXPECTATION_COST: u64 = 20;

#[derive(Debug, Default)]
pub struct FlopCounter(AtomicU64);

impl FlopCounter {
    pub fn new() -> Self {
        Self(AtomicU64::new(0))
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> u64 {
        self.0.swap(0, Ordering::Relaxed)
    }
}

#[inline]
pub(crate) fn tally(counter: Option<&FlopCounter>, n: u64) {
    if let Some(c) = counter {
        c.add(n);
    }
}
