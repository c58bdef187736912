//! Transition storage: a frozen demonstration buffer and a bounded FIFO for
//! online experience.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Demonstration pairs with their precomputed value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// Read-only after construction; there is deliberately no way to add or
/// remove entries.
#[derive(Debug, Clone)]
pub struct DemoBuffer<T> {
    entries: Vec<T>,
}

impl<T> DemoBuffer<T> {
    pub fn new(entries: Vec<T>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::DemoData("demonstration buffer is empty".into()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &T {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.entries.len())).collect()
    }
}

/// Fixed-capacity ring; once full each push evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: Vec<T>,
    next: usize,
    pushed: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() < self.capacity {
            self.entries.push(item);
        } else {
            self.entries[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn get(&self, i: usize) -> &T {
        &self.entries[i]
    }

    /// Entries from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &T> {
        let split = if self.entries.len() < self.capacity { 0 } else { self.next };
        self.entries[split..].iter().chain(self.entries[..split].iter())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.entries.len())).collect()
    }
}
