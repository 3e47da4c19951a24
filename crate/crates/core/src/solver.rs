//! Occupation-measure formulation of the constrained node MDP, its solution,
//! and policy extraction.
//!
//! The program over x(s, a) >= 0 maximizes expected reward subject to one
//! normalization row, one flow-balance row per state, and one inequality per
//! bounded loss class; `build_lp` produces exactly that. The orchestrated
//! `solve_cmdp` goes two steps further so that the extracted policy is
//! optimal *from the cold start* (empty battery, empty queues) and not just
//! as an abstract stationary distribution:
//!
//! * it restricts the program to the states reachable from the start —
//!   occupation measures supported elsewhere cannot be realized by the node,
//!   and on models whose energy steps share a common divisor they would
//!   otherwise tie the optimum on disconnected components;
//! * it augments the program with a second block of transient-flow variables
//!   y(s, a) sourced at the start state (for every state: sum_a x + sum_a y
//!   - inflow of y = [s = start]). Where the limiting occupancy x vanishes,
//!   the extracted policy follows y, which routes the start into an optimal
//!   recurrent class even when the optimal face is degenerate. States with
//!   neither x nor y mass harvest.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::eval::{self, EvalError};
use crate::lp::{self, LinearProgram, LpError, LpOutcome, RowKind};
use crate::model::{ModelError, TransitionModel};
use crate::params::{LossLimit, PriorityClass};
use crate::policy::Policy;
use crate::state::Action;

/// Occupancy total must match one within this tolerance.
pub const OCCUPANCY_SUM_TOL: f64 = 1e-8;
/// Flow-balance residual (infinity norm) accepted for a valid measure.
pub const FLOW_RESIDUAL_TOL: f64 = 1e-8;
/// Feasibility slack accepted on constraint rows.
pub const CONSTRAINT_TOL: f64 = 1e-6;
/// Row sums below this are treated as unvisited states during extraction.
pub const EXTRACT_OCCUPANCY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("solved occupation and start-state evaluation disagree (lp {lp_value:.9}, evaluated {evaluated:.9})")]
    StartInconsistent { lp_value: f64, evaluated: f64 },
}

/// Long-run joint frequency of (state, action) pairs under a stationary
/// policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    x: Vec<[f64; Action::COUNT]>,
}

impl OccupationMeasure {
    pub fn from_rows(x: Vec<[f64; Action::COUNT]>) -> OccupationMeasure {
        OccupationMeasure { x }
    }

    pub fn num_states(&self) -> usize {
        self.x.len()
    }

    pub fn value(&self, state: usize, action: Action) -> f64 {
        self.x[state][action.index()]
    }

    pub fn state_occupancy(&self, state: usize) -> f64 {
        self.x[state].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.x.iter().flatten().sum()
    }

    /// Infinity norm of the flow-balance residual over all states.
    pub fn flow_residual(&self, model: &TransitionModel) -> f64 {
        let n = model.num_states();
        let mut inflow = vec![0.0; n];
        for s in 0..n {
            for a in Action::ALL {
                let xa = self.value(s, a);
                if xa == 0.0 {
                    continue;
                }
                for &(j, p) in &model.row(s, a).next {
                    inflow[j] += xa * p;
                }
            }
        }
        (0..n)
            .map(|s| (self.state_occupancy(s) - inflow[s]).abs())
            .fold(0.0, f64::max)
    }

    /// Expected per-slot value of an arbitrary per-row quantity.
    pub fn expectation<F: Fn(usize, Action) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for (s, row) in self.x.iter().enumerate() {
            for a in Action::ALL {
                let xa = row[a.index()];
                if xa != 0.0 {
                    acc += xa * f(s, a);
                }
            }
        }
        acc
    }

    pub fn expected_reward(&self, model: &TransitionModel) -> f64 {
        self.expectation(|s, a| model.row(s, a).reward)
    }

    pub fn expected_loss(&self, model: &TransitionModel, class: PriorityClass) -> f64 {
        self.expectation(|s, a| model.row(s, a).cost(class))
    }

    pub fn expected_throughput(&self, model: &TransitionModel, class: PriorityClass) -> f64 {
        self.expectation(|s, a| model.row(s, a).throughput(class))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

impl SolveStatus {
    pub fn label(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Summary of one solver invocation. Loss values and the objective are NaN
/// when the program is infeasible.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub loss_lp: f64,
    pub loss_hp: f64,
    pub iterations: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub enum CmdpOutcome {
    Optimal {
        occupation: OccupationMeasure,
        policy: Policy,
        report: SolveReport,
    },
    Infeasible {
        report: SolveReport,
    },
}

impl CmdpOutcome {
    pub fn report(&self) -> &SolveReport {
        match self {
            CmdpOutcome::Optimal { report, .. } => report,
            CmdpOutcome::Infeasible { report } => report,
        }
    }
}

/// Column of one (state, action) pair over the chosen row layout.
fn build_column(
    model: &TransitionModel,
    s: usize,
    a: Action,
    row_of_state: &[usize],
    loss_rows: &[(PriorityClass, usize)],
) -> Vec<(usize, f64)> {
    let row = model.row(s, a);
    // Normalization row is always row 0; `usize::MAX` marks a dropped row.
    let mut col: Vec<(usize, f64)> = Vec::with_capacity(row.next.len() + 3);
    col.push((0, 1.0));
    let mut self_seen = false;
    for &(j, p) in &row.next {
        let r = row_of_state[j];
        if j == s {
            self_seen = true;
            if r != usize::MAX {
                col.push((r, 1.0 - p));
            }
        } else if r != usize::MAX {
            col.push((r, -p));
        }
    }
    if !self_seen && row_of_state[s] != usize::MAX {
        col.push((row_of_state[s], 1.0));
    }
    for &(class, r) in loss_rows {
        let c = row.cost(class);
        if c != 0.0 {
            col.push((r, c));
        }
    }
    col.sort_unstable_by_key(|&(r, _)| r);
    col
}

fn build_lp_over(
    model: &TransitionModel,
    limit_lp: LossLimit,
    limit_hp: LossLimit,
    states: &[usize],
    drop_last_flow_row: bool,
) -> LinearProgram {
    // The flow-balance rows sum to the zero functional over every column, so
    // any one of them is implied by the rest; the internal solve path drops
    // the last one to hand the simplex a full-rank system.
    let flow_rows = if drop_last_flow_row {
        states.len() - 1
    } else {
        states.len()
    };
    let mut row_of_state = vec![usize::MAX; model.num_states()];
    for (i, &s) in states.iter().enumerate() {
        row_of_state[s] = if i < flow_rows { 1 + i } else { usize::MAX };
    }
    let mut rhs = vec![0.0; 1 + flow_rows];
    rhs[0] = 1.0;
    let mut row_kinds = vec![RowKind::Eq; 1 + flow_rows];
    let mut loss_rows = Vec::new();
    for (class, limit) in [
        (PriorityClass::Lp, limit_lp),
        (PriorityClass::Hp, limit_hp),
    ] {
        if let Some(bound) = limit.bound() {
            loss_rows.push((class, rhs.len()));
            rhs.push(bound);
            row_kinds.push(RowKind::Le);
        }
    }

    let mut objective = Vec::with_capacity(states.len() * Action::COUNT);
    let mut columns = Vec::with_capacity(states.len() * Action::COUNT);
    for &s in states {
        for a in Action::ALL {
            objective.push(model.row(s, a).reward);
            columns.push(build_column(model, s, a, &row_of_state, &loss_rows));
        }
    }
    LinearProgram {
        objective,
        columns,
        rhs,
        row_kinds,
    }
}

/// Full-space occupation-measure program: one variable per (state, action),
/// the normalization row, one flow-balance equality per state, and one
/// inequality per bounded loss class.
pub fn build_lp(
    model: &TransitionModel,
    limit_lp: LossLimit,
    limit_hp: LossLimit,
) -> LinearProgram {
    let all: Vec<usize> = (0..model.num_states()).collect();
    build_lp_over(model, limit_lp, limit_hp, &all, false)
}

/// Start-anchored program over the reachable closure: limiting occupancies
/// x(s, a) plus transient flows y(s, a) sourced at the cold start.
///
/// Rows: one x-flow balance per state except the last (implied), then for
/// every state `sum_a x + sum_a y - y-inflow = [s = start]` (these also imply
/// the normalization of x), then one inequality per bounded loss class.
/// Columns: all x variables in canonical order, then all y variables.
fn build_anchored_lp(
    model: &TransitionModel,
    limit_lp: LossLimit,
    limit_hp: LossLimit,
    states: &[usize],
) -> LinearProgram {
    let s_count = states.len();
    let flow_rows_a = s_count - 1;
    let row_b_base = flow_rows_a;
    let mut pos_of = vec![usize::MAX; model.num_states()];
    for (i, &s) in states.iter().enumerate() {
        pos_of[s] = i;
    }

    let mut rhs = vec![0.0; flow_rows_a + s_count];
    let start_pos = pos_of[0];
    rhs[row_b_base + start_pos] = 1.0;
    let mut row_kinds = vec![RowKind::Eq; rhs.len()];
    let mut loss_rows = Vec::new();
    for (class, limit) in [
        (PriorityClass::Lp, limit_lp),
        (PriorityClass::Hp, limit_hp),
    ] {
        if let Some(bound) = limit.bound() {
            loss_rows.push((class, rhs.len()));
            rhs.push(bound);
            row_kinds.push(RowKind::Le);
        }
    }

    let total_vars = 2 * s_count * Action::COUNT;
    let mut objective = Vec::with_capacity(total_vars);
    let mut columns = Vec::with_capacity(total_vars);

    // Flow-shaped entries of one (state, action) pair over a row block.
    let flow_entries = |s: usize, a: Action, row_of: &dyn Fn(usize) -> usize| {
        let row = model.row(s, a);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.next.len() + 1);
        let mut self_seen = false;
        for &(j, p) in &row.next {
            let r = row_of(pos_of[j]);
            if j == s {
                self_seen = true;
                if r != usize::MAX {
                    out.push((r, 1.0 - p));
                }
            } else if r != usize::MAX {
                out.push((r, -p));
            }
        }
        if !self_seen {
            let r = row_of(pos_of[s]);
            if r != usize::MAX {
                out.push((r, 1.0));
            }
        }
        out
    };

    let row_a = |i: usize| if i < flow_rows_a { i } else { usize::MAX };
    for &s in states {
        for a in Action::ALL {
            let mut col = flow_entries(s, a, &row_a);
            col.push((row_b_base + pos_of[s], 1.0));
            let row = model.row(s, a);
            for &(class, r) in &loss_rows {
                let c = row.cost(class);
                if c != 0.0 {
                    col.push((r, c));
                }
            }
            col.sort_unstable_by_key(|&(r, _)| r);
            objective.push(row.reward);
            columns.push(col);
        }
    }
    let row_b = |i: usize| row_b_base + i;
    for &s in states {
        for a in Action::ALL {
            let mut col = flow_entries(s, a, &row_b);
            col.sort_unstable_by_key(|&(r, _)| r);
            objective.push(0.0);
            columns.push(col);
        }
    }

    LinearProgram {
        objective,
        columns,
        rhs,
        row_kinds,
    }
}

/// States reachable from the cold start under any action sequence.
pub fn reachable_closure(model: &TransitionModel) -> Vec<usize> {
    let n = model.num_states();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut out = Vec::new();
    while let Some(s) = stack.pop() {
        out.push(s);
        for a in Action::ALL {
            for &(j, p) in &model.row(s, a).next {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Solve a program produced by [`build_lp`]. The variable layout must be the
/// canonical (state, action) order.
pub fn solve_lp(
    lp: &LinearProgram,
) -> Result<(Option<OccupationMeasure>, SolveReport), SolverError> {
    assert_eq!(lp.num_vars() % Action::COUNT, 0);
    let started = Instant::now();
    match lp::solve(lp)? {
        LpOutcome::Optimal(sol) => {
            let x = reshape(&sol.x);
            let report = SolveReport {
                status: SolveStatus::Optimal,
                objective: sol.objective,
                loss_lp: f64::NAN,
                loss_hp: f64::NAN,
                iterations: sol.iterations,
                wall_time: started.elapsed(),
            };
            Ok((Some(x), report))
        }
        LpOutcome::Infeasible { iterations, .. } => Ok((
            None,
            SolveReport {
                status: SolveStatus::Infeasible,
                objective: f64::NAN,
                loss_lp: f64::NAN,
                loss_hp: f64::NAN,
                iterations,
                wall_time: started.elapsed(),
            },
        )),
    }
}

fn reshape(flat: &[f64]) -> OccupationMeasure {
    let rows = flat
        .chunks_exact(Action::COUNT)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    OccupationMeasure::from_rows(rows)
}

/// Scale a nonnegative row into an exact distribution.
fn normalize_row(row: [f64; Action::COUNT]) -> [f64; Action::COUNT] {
    let mut out = [0.0; Action::COUNT];
    let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v.max(0.0) / total;
    }
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Extract the stationary randomized policy from an occupation measure.
/// States with (numerically) zero occupancy fall back to harvesting, which
/// is always feasible and cost-free.
pub fn extract_policy(x: &OccupationMeasure) -> Policy {
    let mut rows = Vec::with_capacity(x.num_states());
    for s in 0..x.num_states() {
        let occ = x.state_occupancy(s);
        if occ > EXTRACT_OCCUPANCY_FLOOR {
            let mut row = [0.0; Action::COUNT];
            for a in Action::ALL {
                row[a.index()] = x.value(s, a);
            }
            rows.push(normalize_row(row));
        } else {
            let mut row = [0.0; Action::COUNT];
            row[Action::Harvest.index()] = 1.0;
            rows.push(row);
        }
    }
    Policy::from_rows(rows).expect("extracted rows are normalized")
}

/// End-to-end constrained solve: formulate the start-anchored program over
/// the reachable closure, solve, extract the policy (limiting occupancy
/// where present, transient flow elsewhere, harvest fallback last), and
/// verify that evaluating the policy from the cold start reproduces the
/// program's objective and satisfies its bounds.
pub fn solve_cmdp(
    model: &TransitionModel,
    limit_lp: LossLimit,
    limit_hp: LossLimit,
) -> Result<CmdpOutcome, SolverError> {
    let started = Instant::now();
    let closure = reachable_closure(model);
    let lp = build_anchored_lp(model, limit_lp, limit_hp, &closure);
    let outcome = lp::solve(&lp)?;
    let wall_time = started.elapsed();

    let (flat, objective, iterations) = match outcome {
        LpOutcome::Infeasible { iterations, .. } => {
            return Ok(CmdpOutcome::Infeasible {
                report: SolveReport {
                    status: SolveStatus::Infeasible,
                    objective: f64::NAN,
                    loss_lp: f64::NAN,
                    loss_hp: f64::NAN,
                    iterations,
                    wall_time,
                },
            });
        }
        LpOutcome::Optimal(sol) => (sol.x, sol.objective, sol.iterations),
    };

    // Scatter the x block back over the full state space and build the
    // policy, falling back to the y block where the occupancy vanishes.
    let y_base = closure.len() * Action::COUNT;
    let mut rows = vec![[0.0; Action::COUNT]; model.num_states()];
    let mut policy_rows = vec![[0.0; Action::COUNT]; model.num_states()];
    for row in &mut policy_rows {
        row[Action::Harvest.index()] = 1.0;
    }
    for (i, &s) in closure.iter().enumerate() {
        let mut x_row = [0.0; Action::COUNT];
        let mut y_row = [0.0; Action::COUNT];
        for a in 0..Action::COUNT {
            x_row[a] = flat[i * Action::COUNT + a];
            y_row[a] = flat[y_base + i * Action::COUNT + a];
        }
        rows[s] = x_row;
        let source = if x_row.iter().sum::<f64>() > EXTRACT_OCCUPANCY_FLOOR {
            Some(x_row)
        } else if y_row.iter().sum::<f64>() > EXTRACT_OCCUPANCY_FLOOR {
            Some(y_row)
        } else {
            None
        };
        if let Some(row) = source {
            policy_rows[s] = normalize_row(row);
        }
    }
    let occupation = OccupationMeasure::from_rows(rows);
    let policy = Policy::from_rows(policy_rows).expect("extracted rows are normalized");

    let report = SolveReport {
        status: SolveStatus::Optimal,
        objective,
        loss_lp: occupation.expected_loss(model, PriorityClass::Lp),
        loss_hp: occupation.expected_loss(model, PriorityClass::Hp),
        iterations,
        wall_time,
    };

    // The extracted policy, replayed from the cold start, must reproduce the
    // program's value; a disagreement means the solved support is not the
    // chain the node would actually live in.
    let metrics = eval::evaluate_policy(model, &policy)?;
    if (metrics.objective - objective).abs() > CONSTRAINT_TOL {
        return Err(SolverError::StartInconsistent {
            lp_value: objective,
            evaluated: metrics.objective,
        });
    }
    for (class, limit) in [
        (PriorityClass::Lp, limit_lp),
        (PriorityClass::Hp, limit_hp),
    ] {
        if let Some(bound) = limit.bound() {
            let realized = metrics.loss(class);
            if realized > bound + CONSTRAINT_TOL {
                return Err(SolverError::StartInconsistent {
                    lp_value: bound,
                    evaluated: realized,
                });
            }
        }
    }

    Ok(CmdpOutcome::Optimal {
        occupation,
        policy,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::presets::tiny_params;

    #[test]
    fn full_lp_shapes_for_tiny_instance() {
        let p = tiny_params();
        let model = build_model(&p).unwrap();
        let lp = build_lp(&model, LossLimit::Unbounded, LossLimit::Unbounded);
        assert_eq!(lp.num_vars(), 36);
        assert_eq!(lp.num_rows(), 13); // normalization + 12 flow rows
        assert!(lp.row_kinds.iter().all(|&k| k == RowKind::Eq));

        let lp = build_lp(&model, LossLimit::Unbounded, LossLimit::Bounded(0.1));
        assert_eq!(lp.num_rows(), 14);
        assert_eq!(*lp.row_kinds.last().unwrap(), RowKind::Le);
        assert_eq!(*lp.rhs.last().unwrap(), 0.1);
    }

    #[test]
    fn extraction_normalizes_rows() {
        let x = OccupationMeasure::from_rows(vec![[0.02, 0.08, 0.10], [0.0, 0.0, 0.0]]);
        let policy = extract_policy(&x);
        let row = policy.action_probs(0);
        assert!((row[0] - 0.1).abs() < 1e-12);
        assert!((row[1] - 0.4).abs() < 1e-12);
        assert!((row[2] - 0.5).abs() < 1e-12);
        // Unvisited states harvest deterministically.
        assert_eq!(policy.action_probs(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn deterministic_support_extracts_deterministic_policy() {
        let x = OccupationMeasure::from_rows(vec![[0.0, 0.7, 0.0], [0.3, 0.0, 0.0]]);
        let policy = extract_policy(&x);
        assert_eq!(policy.action_probs(0), &[0.0, 1.0, 0.0]);
        assert_eq!(policy.action_probs(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn tiny_closure_is_the_whole_space() {
        let model = build_model(&tiny_params()).unwrap();
        assert_eq!(reachable_closure(&model).len(), 12);
    }

    #[test]
    fn zero_weights_give_zero_objective() {
        let mut p = tiny_params();
        p.weight_lp = 0.0;
        p.weight_hp = 0.0;
        let model = build_model(&p).unwrap();
        let lp = build_lp(&model, LossLimit::Unbounded, LossLimit::Unbounded);
        let (x, report) = solve_lp(&lp).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!(report.objective.abs() < 1e-12);
        assert!(x.is_some());
    }

    #[test]
    fn impossible_loss_bound_is_infeasible() {
        let mut p = tiny_params();
        p.loss_limit_hp = LossLimit::Bounded(0.0);
        let model = build_model(&p).unwrap();
        match solve_cmdp(&model, p.loss_limit_lp, p.loss_limit_hp).unwrap() {
            CmdpOutcome::Infeasible { report } => {
                assert_eq!(report.status, SolveStatus::Infeasible);
                assert!(report.objective.is_nan());
            }
            CmdpOutcome::Optimal { report, .. } => {
                panic!("expected infeasible, got objective {}", report.objective)
            }
        }
    }

    #[test]
    fn tiny_unconstrained_solution_is_valid_occupation() {
        let p = tiny_params();
        let model = build_model(&p).unwrap();
        let outcome = solve_cmdp(&model, LossLimit::Unbounded, LossLimit::Unbounded).unwrap();
        let CmdpOutcome::Optimal {
            occupation, policy, ..
        } = outcome
        else {
            panic!("tiny instance must be feasible");
        };
        assert!((occupation.total() - 1.0).abs() <= OCCUPANCY_SUM_TOL);
        assert!(occupation.flow_residual(&model) <= FLOW_RESIDUAL_TOL);
        policy.validate().unwrap();
    }
}
