//! Shared domain types: cart-pole state and action, transitions, replay buffer.

use std::collections::VecDeque;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

pub const STATE_DIM: usize = 4;
pub const FORCE_LIMIT: f64 = 10.0;

/// Cart position (m), cart velocity (m/s), pole angle (rad, 0 = upright),
/// pole angular velocity (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State(pub [f64; STATE_DIM]);

impl State {
    pub const ZERO: State = State([0.0; STATE_DIM]);

    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        State([x, x_dot, theta, theta_dot])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn x_dot(&self) -> f64 {
        self.0[1]
    }

    pub fn theta(&self) -> f64 {
        self.0[2]
    }

    pub fn theta_dot(&self) -> f64 {
        self.0[3]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for State {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for State {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Horizontal force on the cart, always within `[-FORCE_LIMIT, FORCE_LIMIT]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action(f64);

impl Action {
    /// Clamps to the force bounds. NaN maps to zero force.
    pub fn new(force: f64) -> Self {
        if force.is_nan() {
            Action(0.0)
        } else {
            Action(force.clamp(-FORCE_LIMIT, FORCE_LIMIT))
        }
    }

    pub fn force(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
}

/// FIFO replay buffer with fixed capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    records: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.records.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.records.iter()
    }
}

impl FromIterator<Transition> for ReplayBuffer {
    fn from_iter<I: IntoIterator<Item = Transition>>(iter: I) -> Self {
        let records: VecDeque<Transition> = iter.into_iter().collect();
        let capacity = records.len().max(1);
        ReplayBuffer { records, capacity }
    }
}
