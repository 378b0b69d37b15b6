use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-stochastic `(state, action)` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMatrix {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyMatrix {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn from_rows(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "policy row {s} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Deterministic policy from one action per state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn set_row(&mut self, s: usize, row: &[f64]) {
        self.probs[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(row);
    }
}

/// Samples an index from `weights` (summing to ~1) given `u` in `[0, 1)`.
pub(crate) fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
