//! Built-in model configurations used by tests, benchmarks, and as shipped
//! defaults.

use crate::params::{LossLimit, ModelParams};

/// The reference node configuration: 50-unit battery, two 4-packet queues,
/// Bernoulli(0.15) arrivals per class, 0.99 transmission success, harvest of
/// 4 units with probability 0.98, HP loss bound 0.1, and a 2-unit
/// transmission cost. Matches the shipped `paper.cfg`.
pub fn reference_params() -> ModelParams {
    ModelParams {
        e_max: 50,
        q_lp_max: 4,
        q_hp_max: 4,
        k_tx: 2,
        mu: 0.99,
        harvest_dist: vec![(4, 0.98), (0, 0.02)],
        arrival_lp: vec![0.85, 0.15],
        arrival_hp: vec![0.85, 0.15],
        weight_lp: 0.1,
        weight_hp: 0.9,
        loss_limit_lp: LossLimit::Unbounded,
        loss_limit_hp: LossLimit::Bounded(0.1),
    }
}

/// A 12-state instance small enough for exhaustive oracles: 2-unit battery,
/// single-packet queues, unit transmission cost.
pub fn tiny_params() -> ModelParams {
    ModelParams {
        e_max: 2,
        q_lp_max: 1,
        q_hp_max: 1,
        k_tx: 1,
        mu: 0.99,
        harvest_dist: vec![(4, 0.98), (0, 0.02)],
        arrival_lp: vec![0.85, 0.15],
        arrival_hp: vec![0.85, 0.15],
        weight_lp: 0.1,
        weight_hp: 0.9,
        loss_limit_lp: LossLimit::Unbounded,
        loss_limit_hp: LossLimit::Unbounded,
    }
}
