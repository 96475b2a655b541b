//! Fixed-lag observation delay.

use std::collections::VecDeque;

/// Holds the last `k + 1` pushed items so [`DelayStream::delayed`] can
/// return the one pushed `k` ticks ago. Before `k` pushes have happened
/// it returns the first item.
#[derive(Clone, Debug)]
pub struct DelayStream<T> {
    k: usize,
    buf: VecDeque<(u64, T)>,
}

impl<T: Clone> DelayStream<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            buf: VecDeque::with_capacity(k + 1),
        }
    }

    pub fn lag(&self) -> usize {
        self.k
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    /// Records the item produced at `tick`. Ticks must be pushed in order.
    pub fn push(&mut self, tick: u64, item: T) {
        if self.buf.len() == self.k + 1 {
            self.buf.pop_front();
        }
        self.buf.push_back((tick, item));
    }

    /// The item from `k` ticks before the latest push, with its tick.
    pub fn delayed(&self) -> Option<(u64, &T)> {
        self.buf.front().map(|(t, v)| (*t, v))
    }
}
