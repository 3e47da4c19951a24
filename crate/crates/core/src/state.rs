//! State and action spaces of the node.

use std::fmt;

use crate::params::{ModelParams, ParamsError};

/// A node state: battery level plus the two queue occupancies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    pub e: u32,
    pub q_lp: u32,
    pub q_hp: u32,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(e={}, q_lp={}, q_hp={})", self.e, self.q_lp, self.q_hp)
    }
}

/// The three receiver operations. The discriminants fix the canonical
/// ordering used by every file format and probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Action {
    Harvest = 0,
    TxLp = 1,
    TxHp = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Harvest, Action::TxLp, Action::TxHp];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Action::Harvest => "harvest",
            Action::TxLp => "tx_lp",
            Action::TxHp => "tx_hp",
        }
    }
}

/// Enumeration of all states in canonical order (`e` major, `q_lp` middle,
/// `q_hp` minor) with the inverse index map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub e_max: u32,
    pub q_lp_max: u32,
    pub q_hp_max: u32,
}

impl StateSpace {
    /// Space for validated parameters.
    pub fn new(params: &ModelParams) -> Result<StateSpace, ParamsError> {
        params.validate()?;
        Ok(StateSpace {
            e_max: params.e_max,
            q_lp_max: params.q_lp_max,
            q_hp_max: params.q_hp_max,
        })
    }

    /// Build directly from bounds, bypassing parameter validation. Used by
    /// tests and synthetic models.
    pub fn from_bounds(e_max: u32, q_lp_max: u32, q_hp_max: u32) -> StateSpace {
        StateSpace {
            e_max,
            q_lp_max,
            q_hp_max,
        }
    }

    pub fn len(&self) -> usize {
        (self.e_max as usize + 1) * (self.q_lp_max as usize + 1) * (self.q_hp_max as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: State) -> bool {
        s.e <= self.e_max && s.q_lp <= self.q_lp_max && s.q_hp <= self.q_hp_max
    }

    pub fn index_of(&self, s: State) -> usize {
        debug_assert!(self.contains(s));
        let lp_span = self.q_lp_max as usize + 1;
        let hp_span = self.q_hp_max as usize + 1;
        (s.e as usize * lp_span + s.q_lp as usize) * hp_span + s.q_hp as usize
    }

    pub fn state_at(&self, index: usize) -> State {
        debug_assert!(index < self.len());
        let lp_span = self.q_lp_max as usize + 1;
        let hp_span = self.q_hp_max as usize + 1;
        State {
            e: (index / (lp_span * hp_span)) as u32,
            q_lp: (index / hp_span % lp_span) as u32,
            q_hp: (index % hp_span) as u32,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(move |i| self.state_at(i))
    }
}

/// Enumerate the full state space of validated parameters.
pub fn build_state_space(params: &ModelParams) -> Result<StateSpace, ParamsError> {
    StateSpace::new(params)
}
