use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::Transition;

/// Bounded FIFO transition store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    dims: Option<(usize, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
            dims: None,
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

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Stores `t`, evicting the oldest entry when full. The first push fixes
    /// the state and action dimensions.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        let dims = (t.state.len(), t.action.len());
        match self.dims {
            Some((s, _)) if s != dims.0 => return Err(Error::dim(s, dims.0)),
            Some((_, a)) if a != dims.1 => return Err(Error::dim(a, dims.1)),
            _ => self.dims = Some(dims),
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Draws `n` indices uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n > self.items.len() || self.items.is_empty() {
            return Err(Error::InsufficientData {
                needed: n.max(1),
                available: self.items.len(),
            });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        Batch::from_transitions(&self.sample(n, rng)?)
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        let first = ts.first().ok_or(Error::InsufficientData {
            needed: 1,
            available: 0,
        })?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = ts.len();
        let mut states = Array2::zeros((n, sd));
        let mut next_states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        for (i, t) in ts.iter().enumerate() {
            if t.state.len() != sd {
                return Err(Error::dim(sd, t.state.len()));
            }
            if t.action.len() != ad {
                return Err(Error::dim(ad, t.action.len()));
            }
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&*t.state));
            next_states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&*t.next_state));
            actions.row_mut(i).assign(&ndarray::ArrayView1::from(&*t.action));
        }
        Ok(Self {
            states,
            actions,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states,
            terminals: ts.iter().map(|t| t.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
