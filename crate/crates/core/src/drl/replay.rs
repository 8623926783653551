use std::collections::VecDeque;

use rand::Rng;

use crate::{Error, Result};

/// One layer decision: `(state, action, next state, iteration reward)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Encoded action in `[0, 1]` per dimension.
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Last layer of the iteration; its target has no bootstrap term.
    pub terminal: bool,
}

/// Bounded FIFO of transitions; the oldest is evicted when full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `size` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(reward: f64) -> Transition {
        Transition {
            state: vec![reward],
            action: vec![0.0],
            next_state: vec![0.0],
            reward,
            terminal: false,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            buf.push(t(f64::from(i)));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
        assert!(ReplayBuffer::new(0).is_err());
    }
}
