use std::cell::Cell;

/// Work recorded by the kernels while a [`count_ops`] scope is active.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Multiply-accumulates in convolutions, matrix products and attention.
    pub macs: u64,
    /// Elementwise normalization work: two ops per element per batch norm.
    pub norm_ops: u64,
}

impl OpCount {
    /// Two FLOPs per multiply-accumulate plus normalization ops.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.norm_ops
    }
}

impl std::ops::Add for OpCount {
    type Output = OpCount;

    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            macs: self.macs + rhs.macs,
            norm_ops: self.norm_ops + rhs.norm_ops,
        }
    }
}

thread_local! {
    static ACTIVE: Cell<Option<OpCount>> = const { Cell::new(None) };
}

/// Runs `f` and returns what the kernels on this thread recorded meanwhile.
/// Scopes nest; an outer scope sees the inner scope's work too.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCount) {
    let outer = ACTIVE.with(|c| c.replace(Some(OpCount::default())));
    let result = f();
    let inner = ACTIVE.with(|c| c.replace(outer)).unwrap_or_default();
    if let Some(o) = outer {
        ACTIVE.with(|c| c.set(Some(o + inner)));
    }
    (result, inner)
}

#[inline]
pub(crate) fn record_macs(n: usize) {
    ACTIVE.with(|c| {
        if let Some(mut count) = c.get() {
            count.macs += n as u64;
            c.set(Some(count));
        }
    });
}

#[inline]
pub(crate) fn record_norm_ops(n: usize) {
    ACTIVE.with(|c| {
        if let Some(mut count) = c.get() {
            count.norm_ops += n as u64;
            c.set(Some(count));
        }
    });
}
