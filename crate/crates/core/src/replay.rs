use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One experience tuple. `done` marks a true terminal state (goal reached);
/// episodes cut off by the step limit are stored with `done = false`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<A> {
    pub obs: [f64; 4],
    pub action: A,
    pub reward: f64,
    pub next_obs: [f64; 4],
    pub done: bool,
}

/// Bounded FIFO; the oldest transition is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<A> {
    items: VecDeque<Transition<A>>,
    capacity: usize,
}

impl<A> ReplayBuffer<A> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
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

    pub fn push(&mut self, t: Transition<A>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<A>> {
        self.items.iter()
    }

    /// `batch` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition<A>>> {
        if batch > self.items.len() {
            return Err(CoreError::Domain(format!(
                "cannot sample {batch} transitions from a buffer of {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
