use std::collections::VecDeque;

use rand::Rng;

use crate::game::LOCAL_FIELDS;

/// Joint true state: `LOCAL_FIELDS` raw counts per region, then the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub t: usize,
    pub locals: Vec<f64>,
}

impl JointState {
    pub fn num_regions(&self) -> usize {
        self.locals.len() / LOCAL_FIELDS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: JointState,
    /// Padded region actions, region-major.
    pub region_actions: Vec<f64>,
    /// Adversary actions, three per region.
    pub adversary_actions: Vec<f64>,
    pub reward: f64,
    pub next_state: JointState,
}

/// Bounded FIFO store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}
