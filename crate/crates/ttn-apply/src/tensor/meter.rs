//! Thread-local accounting of live tensor entries.
//!
//! Every [`Tensor`](super::Tensor) registers its entry count on construction
//! and deregisters on drop. An application method calls [`begin`] with the
//! entry count of its inputs and reads [`peak`] when done; the peak is the
//! memory proxy reported in benchmark records. Decomposition scratch buffers
//! are not tensors and are not counted.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(entries: usize) {
    LIVE.with(|l| {
        let v = l.get() + entries as i64;
        l.set(v);
        PEAK.with(|p| {
            if v > p.get() {
                p.set(v);
            }
        });
    });
}

pub(crate) fn on_free(entries: usize) {
    LIVE.with(|l| l.set(l.get() - entries as i64));
}

/// Start a measurement window on the current thread. `base` is the number of
/// entries considered alive at the start (typically the inputs of a call).
pub fn begin(base: usize) {
    LIVE.with(|l| l.set(base as i64));
    PEAK.with(|p| p.set(base as i64));
}

/// Highest number of live entries seen since the last [`begin`].
pub fn peak() -> usize {
    PEAK.with(|p| p.get().max(0) as usize)
}

/// Entries currently alive on this thread (relative to the last [`begin`]).
pub fn live() -> usize {
    LIVE.with(|l| l.get().max(0) as usize)
}
