//! Stationary randomized policies.

use thiserror::Error;

use crate::state::Action;

/// Per-state tolerance for "action probabilities sum to one".
pub const POLICY_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("state {state}: action probabilities sum to {sum}, expected 1")]
    RowSum { state: usize, sum: f64 },
    #[error("state {state}: probability {value} outside [0, 1]")]
    Range { state: usize, value: f64 },
    #[error("policy covers {got} states, model has {expected}")]
    StateCount { got: usize, expected: usize },
}

/// A stationary randomized policy: one distribution over the three actions
/// per state, indexed canonically.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<[f64; Action::COUNT]>,
}

impl Policy {
    /// Build from per-state rows, checking each row is a distribution.
    pub fn from_rows(probs: Vec<[f64; Action::COUNT]>) -> Result<Policy, PolicyError> {
        let policy = Policy { probs };
        policy.validate()?;
        Ok(policy)
    }

    /// The equal-probability baseline: 1/3 to each action in every state.
    pub fn uniform(num_states: usize) -> Policy {
        Policy {
            probs: vec![[1.0 / 3.0; Action::COUNT]; num_states],
        }
    }

    /// Deterministic policy from a per-state action choice.
    pub fn deterministic(actions: &[Action]) -> Policy {
        Policy {
            probs: actions
                .iter()
                .map(|a| {
                    let mut row = [0.0; Action::COUNT];
                    row[a.index()] = 1.0;
                    row
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (state, row) in self.probs.iter().enumerate() {
            for &p in row {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(PolicyError::Range { state, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_SUM_TOL {
                return Err(PolicyError::RowSum { state, sum });
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn action_probs(&self, state: usize) -> &[f64; Action::COUNT] {
        &self.probs[state]
    }

    pub fn prob(&self, state: usize, action: Action) -> f64 {
        self.probs[state][action.index()]
    }

    pub fn rows(&self) -> &[[f64; Action::COUNT]] {
        &self.probs
    }

    /// Map a uniform draw in [0, 1) to an action by inverse CDF in the
    /// canonical action order.
    pub fn sample(&self, state: usize, u: f64) -> Action {
        let row = &self.probs[state];
        let mut acc = 0.0;
        for a in Action::ALL {
            acc += row[a.index()];
            if u < acc {
                return a;
            }
        }
        // Guard against accumulated rounding just below one.
        Action::TxHp
    }
}
