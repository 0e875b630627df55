//! Ring buffer yielding backward differences of a vector-valued stream.

use std::collections::VecDeque;

/// Default buffer length in steps.
pub const DEFAULT_WINDOW: usize = 8;
/// Highest difference order any metric uses (jerk-like, third order).
pub const MAX_ORDER: usize = 3;

/// Fixed-capacity window over the most recent samples of a `dims`-wide stream.
///
/// Differences are formed recursively (`Δᵏx_t = Δᵏ⁻¹x_t − Δᵏ⁻¹x_{t−1}`), so a
/// second difference of a sequence is bit-identical to the first difference of
/// that sequence's first differences.
#[derive(Debug, Clone)]
pub struct DifferenceWindow {
    capacity: usize,
    dims: usize,
    samples: VecDeque<Vec<f64>>,
    scratch: Vec<f64>,
}

impl DifferenceWindow {
    /// # Panics
    /// If `capacity` cannot hold `MAX_ORDER + 1` samples or `dims` is zero.
    pub fn new(capacity: usize, dims: usize) -> Self {
        assert!(capacity > MAX_ORDER, "window must hold at least {} samples", MAX_ORDER + 1);
        assert!(dims > 0, "stream must have at least one dimension");
        Self {
            capacity,
            dims,
            samples: VecDeque::with_capacity(capacity),
            scratch: Vec::with_capacity((MAX_ORDER + 1) * dims),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.dims, "sample width mismatch");
        let slot = if self.samples.len() == self.capacity {
            let mut old = self.samples.pop_front().expect("window is full");
            old.copy_from_slice(sample);
            old
        } else {
            sample.to_vec()
        };
        self.samples.push_back(slot);
    }

    /// `order`-th backward difference at the newest sample, or `None` while the
    /// window holds `order` samples or fewer.
    pub fn difference(&mut self, order: usize) -> Option<&[f64]> {
        assert!(order <= MAX_ORDER && order < self.capacity);
        let n = self.samples.len();
        if n <= order {
            return None;
        }
        let d = self.dims;
        self.scratch.clear();
        for sample in self.samples.range(n - order - 1..) {
            self.scratch.extend_from_slice(sample);
        }
        for level in 0..order {
            for row in (level + 1..=order).rev() {
                for k in 0..d {
                    self.scratch[row * d + k] -= self.scratch[(row - 1) * d + k];
                }
            }
        }
        Some(&self.scratch[order * d..(order + 1) * d])
    }
}
