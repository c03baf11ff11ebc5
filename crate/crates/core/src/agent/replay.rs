use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::StateEmbedding;
use crate::{Error, Result};

/// One step of experience. `next_mask` is the legal-action mask of `next`,
/// used to restrict the bootstrap max to legal actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: StateEmbedding,
    pub action: usize,
    pub reward: f64,
    pub next: StateEmbedding,
    pub done: bool,
    pub next_mask: Vec<bool>,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    learning_starts: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, learning_starts: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
            learning_starts,
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

    pub fn can_sample(&self) -> bool {
        self.items.len() >= self.learning_starts.max(1)
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, transition: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(transition);
        } else {
            self.items[self.cursor] = transition;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if !self.can_sample() {
            return Err(Error::BufferTooSmall {
                len: self.items.len(),
                required: self.learning_starts.max(1),
            });
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
