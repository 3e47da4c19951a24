//! Receiver-operation optimization for an RF energy-harvesting node.
//!
//! A single node serves two finite priority queues (low- and high-priority
//! packets) from a finite battery charged by RF energy transfer. Each slot it
//! either requests energy or attempts to transmit one packet from one queue.
//! This crate builds the exact slot-level Markov model of that node, solves
//! for the throughput-optimal stationary policy under long-run packet-loss
//! constraints via an occupation-measure linear program, evaluates arbitrary
//! stationary policies in closed form, and replays them in a seeded
//! discrete-time simulation.

pub mod eval;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod params;
pub mod policy;
pub mod presets;
pub mod sim;
pub mod solver;
pub mod state;

pub use eval::{evaluate_policy, relative_value_iteration, stationary_distribution, Metrics};
pub use model::{build_model, loss_cost, reward, transition, ModelError, TransitionModel};
pub use params::{LossLimit, ModelParams, ParamsError, PriorityClass};
pub use policy::Policy;
pub use sim::{simulate, static_policy, SimConfig, SimTrace};
pub use solver::{
    build_lp, extract_policy, solve_cmdp, solve_lp, CmdpOutcome, OccupationMeasure, SolveReport,
    SolveStatus, SolverError,
};
pub use state::{build_state_space, Action, State, StateSpace};
