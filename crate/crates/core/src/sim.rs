//! Seeded discrete-time Monte-Carlo replay of the node under a stationary
//! policy, with per-packet delay tracking and batch-means standard errors.
//!
//! Each slot consumes exactly four uniform draws in a fixed order (action,
//! harvest/departure outcome, LP arrivals, HP arrivals) whether or not every
//! draw is used, so traces are reproducible from (parameters, policy, seed)
//! alone. The generator is ChaCha8 seeded from the 64-bit config seed.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::tx_feasible;
use crate::params::{ModelParams, ParamsError, PriorityClass};
use crate::policy::Policy;
use crate::state::{Action, State, StateSpace};

/// Name of the pseudo-random generator, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("policy covers {policy} states but the model has {model}")]
    StateCount { policy: usize, model: usize },
    #[error("warmup_slots ({warmup}) must be smaller than slots ({slots})")]
    WarmupTooLong { warmup: u64, slots: u64 },
}

/// Simulation run controls.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub slots: u64,
    pub seed: u64,
    /// Leading slots excluded from every aggregate, discharging the
    /// cold-start transient.
    pub warmup_slots: u64,
    /// Keep the per-slot records (memory-heavy for long runs).
    pub record_slots: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            slots: 1_000_000,
            seed: 1,
            warmup_slots: 10_000,
            record_slots: false,
        }
    }
}

/// A point estimate with its batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// One slot of a recorded trace: the pre-slot state, the action drawn, and
/// everything that happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub state: State,
    pub action: Action,
    pub tx_success: bool,
    pub arrivals_lp: u32,
    pub arrivals_hp: u32,
    pub drops_lp: u32,
    pub drops_hp: u32,
}

/// Aggregated outcome of a simulation run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    /// Successful deliveries per slot.
    pub throughput_lp: Estimate,
    pub throughput_hp: Estimate,
    /// Dropped/arrived packet ratio.
    pub loss_lp: Estimate,
    pub loss_hp: Estimate,
    /// Per-slot average of the immediate loss-cost of the visited states
    /// (the constraint quantity).
    pub loss_cost_lp: Estimate,
    pub loss_cost_hp: Estimate,
    /// Mean admission-to-delivery sojourn in slots; `None` when nothing was
    /// delivered in the measurement window.
    pub delay_lp: Option<Estimate>,
    pub delay_hp: Option<Estimate>,
    pub arrived_lp: u64,
    pub arrived_hp: u64,
    pub dropped_lp: u64,
    pub dropped_hp: u64,
    pub delivered_lp: u64,
    pub delivered_hp: u64,
    pub measured_slots: u64,
    pub seed: u64,
    pub rng_algorithm: &'static str,
    /// Per-slot records when requested in the config.
    pub records: Option<Vec<SlotRecord>>,
}

impl SimTrace {
    pub fn throughput(&self, class: PriorityClass) -> Estimate {
        match class {
            PriorityClass::Lp => self.throughput_lp,
            PriorityClass::Hp => self.throughput_hp,
        }
    }

    pub fn loss(&self, class: PriorityClass) -> Estimate {
        match class {
            PriorityClass::Lp => self.loss_lp,
            PriorityClass::Hp => self.loss_hp,
        }
    }

    pub fn delay(&self, class: PriorityClass) -> Option<Estimate> {
        match class {
            PriorityClass::Lp => self.delay_lp,
            PriorityClass::Hp => self.delay_hp,
        }
    }
}

/// The equal-probability baseline policy over a state space of `num_states`.
pub fn static_policy(num_states: usize) -> Policy {
    Policy::uniform(num_states)
}

fn sample_discrete(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Mean and batch-means standard error of per-batch averages.
fn batch_stats(batch_sums: &[f64], batch_counts: &[f64]) -> Estimate {
    let pairs: Vec<f64> = batch_sums
        .iter()
        .zip(batch_counts)
        .filter(|&(_, &c)| c > 0.0)
        .map(|(&s, &c)| s / c)
        .collect();
    let total: f64 = batch_sums.iter().sum();
    let count: f64 = batch_counts.iter().sum();
    let value = if count > 0.0 { total / count } else { 0.0 };
    let b = pairs.len();
    if b < 2 {
        return Estimate { value, se: 0.0 };
    }
    let mean = pairs.iter().sum::<f64>() / b as f64;
    let var = pairs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    Estimate {
        value,
        se: (var / b as f64).sqrt(),
    }
}

struct ClassCounters {
    arrived: u64,
    dropped: u64,
    delivered: u64,
    // Batch accumulators, indexed by measurement batch.
    deliveries: Vec<f64>,
    drops: Vec<f64>,
    arrivals: Vec<f64>,
    cost_sum: Vec<f64>,
    sojourn_sum: Vec<f64>,
    sojourn_count: Vec<f64>,
    /// Admission slot of each queued packet, tracked in FIFO order.
    queue: VecDeque<u64>,
}

impl ClassCounters {
    fn new(batches: usize) -> ClassCounters {
        ClassCounters {
            arrived: 0,
            dropped: 0,
            delivered: 0,
            deliveries: vec![0.0; batches],
            drops: vec![0.0; batches],
            arrivals: vec![0.0; batches],
            cost_sum: vec![0.0; batches],
            sojourn_sum: vec![0.0; batches],
            sojourn_count: vec![0.0; batches],
            queue: VecDeque::new(),
        }
    }
}

/// Run the simulation. Deterministic given (params, policy, seed).
pub fn simulate(
    params: &ModelParams,
    policy: &Policy,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    params.validate()?;
    let space = StateSpace::new(params)?;
    if policy.num_states() != space.len() {
        return Err(SimError::StateCount {
            policy: policy.num_states(),
            model: space.len(),
        });
    }
    if cfg.warmup_slots >= cfg.slots {
        return Err(SimError::WarmupTooLong {
            warmup: cfg.warmup_slots,
            slots: cfg.slots,
        });
    }

    let measured_slots = cfg.slots - cfg.warmup_slots;
    let batch_len = (measured_slots / 1000).max(64);
    let batches = (measured_slots as usize).div_ceil(batch_len as usize);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = State {
        e: 0,
        q_lp: 0,
        q_hp: 0,
    };
    let mut counters = [ClassCounters::new(batches), ClassCounters::new(batches)];
    let mut slot_cost = [0.0f64; 2];
    let mut records = if cfg.record_slots {
        Some(Vec::with_capacity(cfg.slots as usize))
    } else {
        None
    };

    let harvest_probs: Vec<f64> = params.harvest_dist.iter().map(|&(_, p)| p).collect();

    for slot in 0..cfg.slots {
        let measured = slot >= cfg.warmup_slots;
        let batch = if measured {
            (((slot - cfg.warmup_slots) / batch_len) as usize).min(batches - 1)
        } else {
            0
        };
        let state_index = space.index_of(state);
        if measured {
            slot_cost[0] = crate::model::loss_cost(params, state.q_lp, PriorityClass::Lp);
            slot_cost[1] = crate::model::loss_cost(params, state.q_hp, PriorityClass::Hp);
            for (c, counter) in counters.iter_mut().enumerate() {
                counter.cost_sum[batch] += slot_cost[c];
            }
        }

        // Fixed draw order: action, outcome, LP arrivals, HP arrivals.
        let u_action: f64 = rng.random();
        let action = policy.sample(state_index, u_action);
        let u_outcome: f64 = rng.random();
        let u_lp: f64 = rng.random();
        let u_hp: f64 = rng.random();

        let mut tx_success = false;
        match action {
            Action::Harvest => {
                let k = sample_discrete(&harvest_probs, u_outcome);
                state.e = (state.e + params.harvest_dist[k].0).min(params.e_max);
            }
            Action::TxLp | Action::TxHp => {
                let class = if action == Action::TxLp {
                    PriorityClass::Lp
                } else {
                    PriorityClass::Hp
                };
                if tx_feasible(params, state, class) {
                    state.e -= params.k_tx;
                    if u_outcome < params.mu {
                        tx_success = true;
                        let ci = class as usize;
                        let admitted_at = counters[ci].queue.pop_front().expect("queue nonempty");
                        match class {
                            PriorityClass::Lp => state.q_lp -= 1,
                            PriorityClass::Hp => state.q_hp -= 1,
                        }
                        if measured {
                            counters[ci].delivered += 1;
                            counters[ci].deliveries[batch] += 1.0;
                            if admitted_at >= cfg.warmup_slots {
                                let sojourn = (slot - admitted_at) as f64;
                                let adm_batch = (((admitted_at - cfg.warmup_slots) / batch_len)
                                    as usize)
                                    .min(batches - 1);
                                counters[ci].sojourn_sum[adm_batch] += sojourn;
                                counters[ci].sojourn_count[adm_batch] += 1.0;
                            }
                        }
                    }
                }
                // Infeasible transmissions idle; the outcome draw is spent
                // either way.
            }
        }

        let mut arr = [0u32; 2];
        let mut dropped = [0u32; 2];
        for (ci, (class, u)) in [(PriorityClass::Lp, u_lp), (PriorityClass::Hp, u_hp)]
            .into_iter()
            .enumerate()
        {
            arr[ci] = sample_discrete(params.arrivals(class), u) as u32;
            let (q, cap) = match class {
                PriorityClass::Lp => (&mut state.q_lp, params.q_lp_max),
                PriorityClass::Hp => (&mut state.q_hp, params.q_hp_max),
            };
            let admitted = arr[ci].min(cap - *q);
            dropped[ci] = arr[ci] - admitted;
            *q += admitted;
            for _ in 0..admitted {
                counters[ci].queue.push_back(slot);
            }
            if measured {
                counters[ci].arrived += arr[ci] as u64;
                counters[ci].dropped += dropped[ci] as u64;
                counters[ci].arrivals[batch] += arr[ci] as f64;
                counters[ci].drops[batch] += dropped[ci] as f64;
            }
        }

        debug_assert!(space.contains(state));
        if let Some(rec) = records.as_mut() {
            rec.push(SlotRecord {
                slot,
                state: space.state_at(state_index),
                action,
                tx_success,
                arrivals_lp: arr[0],
                arrivals_hp: arr[1],
                drops_lp: dropped[0],
                drops_hp: dropped[1],
            });
        }
    }

    let slots_per_batch: Vec<f64> = (0..batches)
        .map(|b| {
            let start = b as u64 * batch_len;
            let end = ((b as u64 + 1) * batch_len).min(measured_slots);
            (end - start) as f64
        })
        .collect();

    let stats = |c: &ClassCounters| {
        let throughput = batch_stats(&c.deliveries, &slots_per_batch);
        let loss = batch_stats(&c.drops, &c.arrivals);
        let loss_cost = batch_stats(&c.cost_sum, &slots_per_batch);
        let delay = if c.sojourn_count.iter().sum::<f64>() > 0.0 {
            Some(batch_stats(&c.sojourn_sum, &c.sojourn_count))
        } else {
            None
        };
        (throughput, loss, loss_cost, delay)
    };
    let (thr_lp, loss_lp, cost_lp, delay_lp) = stats(&counters[0]);
    let (thr_hp, loss_hp, cost_hp, delay_hp) = stats(&counters[1]);

    Ok(SimTrace {
        throughput_lp: thr_lp,
        throughput_hp: thr_hp,
        loss_lp,
        loss_hp,
        loss_cost_lp: cost_lp,
        loss_cost_hp: cost_hp,
        delay_lp,
        delay_hp,
        arrived_lp: counters[0].arrived,
        arrived_hp: counters[1].arrived,
        dropped_lp: counters[0].dropped,
        dropped_hp: counters[1].dropped,
        delivered_lp: counters[0].delivered,
        delivered_hp: counters[1].delivered,
        measured_slots,
        seed: cfg.seed,
        rng_algorithm: RNG_ALGORITHM,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::tiny_params;

    fn short_cfg(seed: u64) -> SimConfig {
        SimConfig {
            slots: 20_000,
            seed,
            warmup_slots: 1_000,
            record_slots: true,
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_trace() {
        let p = tiny_params();
        let policy = static_policy(12);
        let a = simulate(&p, &policy, &short_cfg(7)).unwrap();
        let b = simulate(&p, &policy, &short_cfg(7)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.throughput_hp, b.throughput_hp);
        assert_eq!(a.dropped_lp, b.dropped_lp);
        let c = simulate(&p, &policy, &short_cfg(8)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn harvest_always_without_arrivals_fills_battery() {
        let mut p = tiny_params();
        p.arrival_lp = vec![1.0];
        p.arrival_hp = vec![1.0];
        let policy = Policy::deterministic(&vec![Action::Harvest; 12]);
        let trace = simulate(&p, &policy, &short_cfg(3)).unwrap();
        assert_eq!(trace.delivered_lp + trace.delivered_hp, 0);
        assert_eq!(trace.arrived_lp + trace.arrived_hp, 0);
        // The battery saturates quickly and stays there.
        let records = trace.records.unwrap();
        assert!(records[100..].iter().all(|r| r.state.e == p.e_max));
    }

    #[test]
    fn warmup_must_leave_room() {
        let p = tiny_params();
        let policy = static_policy(12);
        let cfg = SimConfig {
            slots: 10,
            warmup_slots: 10,
            ..short_cfg(1)
        };
        let err = simulate(&p, &policy, &cfg).err().unwrap();
        assert_eq!(
            err,
            SimError::WarmupTooLong {
                warmup: 10,
                slots: 10
            }
        );
    }

    #[test]
    fn bounds_hold_in_every_recorded_slot() {
        let p = tiny_params();
        let policy = static_policy(12);
        let trace = simulate(&p, &policy, &short_cfg(11)).unwrap();
        for r in trace.records.unwrap() {
            assert!(r.state.e <= p.e_max);
            assert!(r.state.q_lp <= p.q_lp_max);
            assert!(r.state.q_hp <= p.q_hp_max);
        }
    }

    #[test]
    fn counts_are_consistent() {
        let p = tiny_params();
        let policy = static_policy(12);
        let trace = simulate(&p, &policy, &short_cfg(5)).unwrap();
        // Admissions = arrivals - drops; deliveries may additionally drain
        // whatever the warmup left in the queue, at most its capacity.
        assert!(trace.dropped_lp <= trace.arrived_lp);
        assert!(
            trace.delivered_lp <= trace.arrived_lp - trace.dropped_lp + p.q_lp_max as u64
        );
        assert!(trace.dropped_hp <= trace.arrived_hp);
        assert!(
            trace.delivered_hp <= trace.arrived_hp - trace.dropped_hp + p.q_hp_max as u64
        );
    }
}
