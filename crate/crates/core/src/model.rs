//! Exact transition, reward, and loss-cost model of the node.
//!
//! A slot unfolds in a fixed order: the chosen action takes effect first
//! (harvest or transmission attempt), then new packets arrive, then queue
//! clipping at capacity. Loss costs are attached to the pre-transition queue
//! occupancy of the state, identically for every action of that state.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::params::{ModelParams, ParamsError, PriorityClass};
use crate::state::{Action, State, StateSpace};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("state {0} is outside the state space")]
    StateOutOfBounds(State),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Everything attached to one (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SaRow {
    /// Sparse next-state distribution, sorted by state index; probabilities
    /// sum to one.
    pub next: Vec<(usize, f64)>,
    /// Per-slot successful-transmission probability contributed to the LP
    /// class: `mu` when this is a feasible LP transmission, else zero.
    pub thr_lp: f64,
    /// Same for the HP class.
    pub thr_hp: f64,
    /// Weighted per-slot reward, `weight_lp * thr_lp + weight_hp * thr_hp`.
    pub reward: f64,
    /// Immediate loss cost of the state for the LP class.
    pub cost_lp: f64,
    /// Immediate loss cost of the state for the HP class.
    pub cost_hp: f64,
    /// Expected number of LP packets dropped by overflow during this slot.
    pub drop_lp: f64,
    /// Expected number of HP packets dropped by overflow during this slot.
    pub drop_hp: f64,
}

impl SaRow {
    pub fn throughput(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.thr_lp,
            PriorityClass::Hp => self.thr_hp,
        }
    }

    pub fn cost(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.cost_lp,
            PriorityClass::Hp => self.cost_hp,
        }
    }

    pub fn expected_drops(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.drop_lp,
            PriorityClass::Hp => self.drop_hp,
        }
    }
}

/// The full sparse model: one row per (state, action) in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub space: StateSpace,
    pub weight_lp: f64,
    pub weight_hp: f64,
    pub mean_arrival_lp: f64,
    pub mean_arrival_hp: f64,
    rows: Vec<SaRow>,
}

impl TransitionModel {
    /// Build the exact model for validated parameters. Construction is
    /// deterministic: equal parameters produce bit-identical models.
    pub fn build(params: &ModelParams) -> Result<TransitionModel, ModelError> {
        params.validate()?;
        let space = StateSpace::new(params)?;
        let mut rows = Vec::with_capacity(space.len() * Action::COUNT);
        for s in space.iter() {
            let cost_lp = loss_cost(params, s.q_lp, PriorityClass::Lp);
            let cost_hp = loss_cost(params, s.q_hp, PriorityClass::Hp);
            for a in Action::ALL {
                let next = transition_indexed(params, &space, s, a);
                let (thr_lp, thr_hp) = throughput_terms(params, s, a);
                let (drop_lp, drop_hp) = expected_drops(params, s, a);
                rows.push(SaRow {
                    next,
                    thr_lp,
                    thr_hp,
                    reward: params.weight_lp * thr_lp + params.weight_hp * thr_hp,
                    cost_lp,
                    cost_hp,
                    drop_lp,
                    drop_hp,
                });
            }
        }
        Ok(TransitionModel {
            space,
            weight_lp: params.weight_lp,
            weight_hp: params.weight_hp,
            mean_arrival_lp: params.mean_arrival(PriorityClass::Lp),
            mean_arrival_hp: params.mean_arrival(PriorityClass::Hp),
            rows,
        })
    }

    /// Assemble a model from raw rows. Intended for synthetic chains in
    /// tests; performs only structural checks.
    pub fn from_parts(
        space: StateSpace,
        weight_lp: f64,
        weight_hp: f64,
        mean_arrival_lp: f64,
        mean_arrival_hp: f64,
        rows: Vec<SaRow>,
    ) -> TransitionModel {
        assert_eq!(rows.len(), space.len() * Action::COUNT);
        TransitionModel {
            space,
            weight_lp,
            weight_hp,
            mean_arrival_lp,
            mean_arrival_hp,
            rows,
        }
    }

    pub fn num_states(&self) -> usize {
        self.space.len()
    }

    pub fn row(&self, state: usize, action: Action) -> &SaRow {
        &self.rows[state * Action::COUNT + action.index()]
    }

    pub fn rows(&self) -> &[SaRow] {
        &self.rows
    }

    pub fn mean_arrival(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.mean_arrival_lp,
            PriorityClass::Hp => self.mean_arrival_hp,
        }
    }

    /// Reward of a row under alternative objective weights.
    pub fn reward_with(&self, state: usize, action: Action, weight_lp: f64, weight_hp: f64) -> f64 {
        let row = self.row(state, action);
        weight_lp * row.thr_lp + weight_hp * row.thr_hp
    }
}

/// Can the node actually transmit a packet of `class` from state `s`?
pub fn tx_feasible(params: &ModelParams, s: State, class: PriorityClass) -> bool {
    let queue = match class {
        PriorityClass::Lp => s.q_lp,
        PriorityClass::Hp => s.q_hp,
    };
    queue > 0 && s.e >= params.k_tx
}

fn throughput_terms(params: &ModelParams, s: State, a: Action) -> (f64, f64) {
    match a {
        Action::TxLp if tx_feasible(params, s, PriorityClass::Lp) => (params.mu, 0.0),
        Action::TxHp if tx_feasible(params, s, PriorityClass::Hp) => (0.0, params.mu),
        _ => (0.0, 0.0),
    }
}

/// Per-slot reward of an action: the weighted success probability of a
/// feasible transmission, zero otherwise (harvesting earns nothing).
pub fn reward(params: &ModelParams, s: State, a: Action) -> f64 {
    let (thr_lp, thr_hp) = throughput_terms(params, s, a);
    params.weight_lp * thr_lp + params.weight_hp * thr_hp
}

/// Immediate packet-loss cost of holding `q` packets of `class`: the
/// probability mass of arrival batches that would overflow the remaining
/// space, divided by the mean arrival rate. Zero when even the largest batch
/// fits.
pub fn loss_cost(params: &ModelParams, q: u32, class: PriorityClass) -> f64 {
    let cap = params.queue_cap(class);
    assert!(q <= cap, "queue occupancy {q} exceeds capacity {cap}");
    let arrivals = params.arrivals(class);
    let first_lost = (cap - q + 1) as usize;
    if first_lost >= arrivals.len() {
        return 0.0;
    }
    let overflow_mass: f64 = arrivals[first_lost..].iter().sum();
    if overflow_mass == 0.0 {
        return 0.0;
    }
    overflow_mass / params.mean_arrival(class)
}

/// Outcome of the action phase, before arrivals.
struct ActionOutcome {
    e: u32,
    q_lp: u32,
    q_hp: u32,
    prob: f64,
}

fn action_outcomes(params: &ModelParams, s: State, a: Action) -> Vec<ActionOutcome> {
    let mut out = Vec::new();
    match a {
        Action::Harvest => {
            for &(w, sigma) in &params.harvest_dist {
                if sigma == 0.0 {
                    continue;
                }
                out.push(ActionOutcome {
                    e: (s.e + w).min(params.e_max),
                    q_lp: s.q_lp,
                    q_hp: s.q_hp,
                    prob: sigma,
                });
            }
        }
        Action::TxLp | Action::TxHp => {
            let class = if a == Action::TxLp {
                PriorityClass::Lp
            } else {
                PriorityClass::Hp
            };
            if tx_feasible(params, s, class) {
                let e_after = s.e - params.k_tx;
                let (dep_lp, dep_hp) = match class {
                    PriorityClass::Lp => (1, 0),
                    PriorityClass::Hp => (0, 1),
                };
                if params.mu > 0.0 {
                    out.push(ActionOutcome {
                        e: e_after,
                        q_lp: s.q_lp - dep_lp,
                        q_hp: s.q_hp - dep_hp,
                        prob: params.mu,
                    });
                }
                if params.mu < 1.0 {
                    out.push(ActionOutcome {
                        e: e_after,
                        q_lp: s.q_lp,
                        q_hp: s.q_hp,
                        prob: 1.0 - params.mu,
                    });
                }
            } else {
                // An infeasible transmission is an idle no-op.
                out.push(ActionOutcome {
                    e: s.e,
                    q_lp: s.q_lp,
                    q_hp: s.q_hp,
                    prob: 1.0,
                });
            }
        }
    }
    out
}

fn transition_indexed(
    params: &ModelParams,
    space: &StateSpace,
    s: State,
    a: Action,
) -> Vec<(usize, f64)> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for outcome in action_outcomes(params, s, a) {
        for (k_lp, &p_lp) in params.arrival_lp.iter().enumerate() {
            if p_lp == 0.0 {
                continue;
            }
            let q_lp = (outcome.q_lp + k_lp as u32).min(params.q_lp_max);
            for (k_hp, &p_hp) in params.arrival_hp.iter().enumerate() {
                if p_hp == 0.0 {
                    continue;
                }
                let q_hp = (outcome.q_hp + k_hp as u32).min(params.q_hp_max);
                let next = State {
                    e: outcome.e,
                    q_lp,
                    q_hp,
                };
                *acc.entry(space.index_of(next)).or_insert(0.0) += outcome.prob * p_lp * p_hp;
            }
        }
    }
    acc.into_iter().collect()
}

/// One-step next-state distribution of `(s, a)` for validated parameters.
pub fn transition(params: &ModelParams, s: State, a: Action) -> Result<Vec<(State, f64)>, ModelError> {
    params.validate()?;
    let space = StateSpace::new(params)?;
    if !space.contains(s) {
        return Err(ModelError::StateOutOfBounds(s));
    }
    Ok(transition_indexed(params, &space, s, a)
        .into_iter()
        .map(|(i, p)| (space.state_at(i), p))
        .collect())
}

/// Expected packets of each class lost to queue overflow in one slot,
/// accounting for the departure that may free a slot before arrivals land.
fn expected_drops(params: &ModelParams, s: State, a: Action) -> (f64, f64) {
    let mut drops = [0.0f64; 2];
    for outcome in action_outcomes(params, s, a) {
        for (ci, class) in PriorityClass::BOTH.into_iter().enumerate() {
            let q = match class {
                PriorityClass::Lp => outcome.q_lp,
                PriorityClass::Hp => outcome.q_hp,
            };
            let free = (params.queue_cap(class) - q) as usize;
            for (k, &p) in params.arrivals(class).iter().enumerate() {
                if k > free {
                    drops[ci] += outcome.prob * p * (k - free) as f64;
                }
            }
        }
    }
    (drops[0], drops[1])
}

/// Build the complete model (validates parameters first).
pub fn build_model(params: &ModelParams) -> Result<TransitionModel, ModelError> {
    TransitionModel::build(params)
}
