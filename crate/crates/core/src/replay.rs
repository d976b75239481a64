//! Fixed-capacity experience replay with oldest-first eviction.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay memory")]
    Empty,
    #[error("replay capacity must be positive")]
    ZeroCapacity,
}

/// Ring of the most recent `capacity` items; sampling is uniform with replacement.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    capacity: usize,
    items: VecDeque<T>,
    rng: ChaCha8Rng,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize, seed: u64) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// Draws `k` items independently and uniformly.
    pub fn sample(&mut self, k: usize) -> Result<Vec<&T>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        let n = self.items.len();
        let picks: Vec<usize> = (0..k).map(|_| self.rng.gen_range(0..n)).collect();
        Ok(picks.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}
