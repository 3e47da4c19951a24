//! Exact evaluation of stationary policies: stationary distribution of the
//! induced chain, closed-form performance metrics, and an independent
//! average-reward oracle (relative value iteration).

use thiserror::Error;

use crate::linalg::{self, DMatrix};
use crate::model::TransitionModel;
use crate::params::PriorityClass;
use crate::policy::Policy;
use crate::state::Action;

/// Invariance tolerance for the stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Span tolerance for relative value iteration.
pub const RVI_SPAN_TOL: f64 = 1e-9;

const POWER_ITER_SMALL: usize = 20_000;
const POWER_ITER_LARGE: usize = 200_000;
/// Dense fallback is only attempted below this state count.
const DENSE_FALLBACK_LIMIT: usize = 2000;
const RVI_MAX_ITER: usize = 200_000;
/// Damping used to make power iteration and value iteration insensitive to
/// periodic chains; it leaves stationary distributions and gains unchanged.
const DAMPING: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy covers {policy} states but the model has {model}")]
    StateCount { policy: usize, model: usize },
    #[error("stationary distribution did not converge (residual {residual:.3e})")]
    NotConverged { residual: f64 },
    #[error("balance equations are numerically singular")]
    SingularBalance,
    #[error("relative value iteration did not converge (span {span:.3e})")]
    RviNotConverged { span: f64 },
}

/// Long-run per-slot performance of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Successfully delivered packets per slot, by class.
    pub throughput_lp: f64,
    pub throughput_hp: f64,
    /// Long-run average of the immediate loss cost (the constraint quantity).
    pub loss_lp: f64,
    pub loss_hp: f64,
    /// Expected overflow drops per arriving packet; comparable to the
    /// simulator's dropped/arrived ratio.
    pub drop_rate_lp: f64,
    pub drop_rate_hp: f64,
    /// Mean admission-to-delivery sojourn in slots, by Little's law;
    /// undefined when no packet is ever admitted.
    pub delay_lp: Option<f64>,
    pub delay_hp: Option<f64>,
    /// Weighted throughput objective.
    pub objective: f64,
}

impl Metrics {
    pub fn throughput(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.throughput_lp,
            PriorityClass::Hp => self.throughput_hp,
        }
    }

    pub fn loss(&self, class: PriorityClass) -> f64 {
        match class {
            PriorityClass::Lp => self.loss_lp,
            PriorityClass::Hp => self.loss_hp,
        }
    }

    pub fn delay(&self, class: PriorityClass) -> Option<f64> {
        match class {
            PriorityClass::Lp => self.delay_lp,
            PriorityClass::Hp => self.delay_hp,
        }
    }
}

/// Merge the per-action rows of a model under a policy into one sparse
/// row-stochastic matrix.
pub fn induced_chain(model: &TransitionModel, policy: &Policy) -> Vec<Vec<(usize, f64)>> {
    let n = model.num_states();
    let mut rows = Vec::with_capacity(n);
    for s in 0..n {
        let probs = policy.action_probs(s);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for a in Action::ALL {
            let pa = probs[a.index()];
            if pa == 0.0 {
                continue;
            }
            for &(j, p) in &model.row(s, a).next {
                match acc.binary_search_by_key(&j, |&(k, _)| k) {
                    Ok(pos) => acc[pos].1 += pa * p,
                    Err(pos) => acc.insert(pos, (j, pa * p)),
                }
            }
        }
        rows.push(acc);
    }
    rows
}

fn reachable_from(rows: &[Vec<(usize, f64)>], start: usize) -> Vec<usize> {
    let mut seen = vec![false; rows.len()];
    let mut stack = vec![start];
    let mut out = Vec::new();
    seen[start] = true;
    while let Some(i) = stack.pop() {
        out.push(i);
        for &(j, p) in &rows[i] {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    out.sort_unstable();
    out
}

/// max_j |(dP)_j - d_j| against the undamped chain.
fn invariance_residual(rows: &[Vec<(usize, f64)>], d: &[f64]) -> f64 {
    let mut next = vec![0.0; d.len()];
    for (i, &mass) in d.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for &(j, p) in &rows[i] {
            next[j] += mass * p;
        }
    }
    next.iter()
        .zip(d)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn power_iteration(
    rows: &[Vec<(usize, f64)>],
    start: usize,
    max_iter: usize,
) -> Result<Vec<f64>, f64> {
    let n = rows.len();
    let mut d = vec![0.0; n];
    d[start] = 1.0;
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 0..max_iter {
        next.fill(0.0);
        for (i, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            next[i] += DAMPING * mass;
            for &(j, p) in &rows[i] {
                next[j] += (1.0 - DAMPING) * mass * p;
            }
        }
        let sum: f64 = next.iter().sum();
        for v in &mut next {
            *v /= sum;
        }
        std::mem::swap(&mut d, &mut next);
        // The full invariance check costs one extra multiply; amortize it.
        if iter % 16 == 15 || iter == max_iter - 1 {
            residual = invariance_residual(rows, &d);
            if residual <= STATIONARY_TOL {
                return Ok(d);
            }
        }
    }
    Err(residual)
}

/// Strongly connected components of the positive-probability graph over the
/// given node subset (iterative Tarjan). Returns one sorted vec per SCC.
fn sccs(rows: &[Vec<(usize, f64)>], nodes: &[usize]) -> Vec<Vec<usize>> {
    let n = rows.len();
    let mut in_set = vec![false; n];
    for &v in nodes {
        in_set[v] = true;
    }
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0;
    let mut out = Vec::new();

    for &root in nodes {
        if index[root] != usize::MAX {
            continue;
        }
        // (node, edge cursor)
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut cursor)) = call.last_mut() {
            if *cursor == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            let mut descended = false;
            while *cursor < rows[v].len() {
                let (w, p) = rows[v][*cursor];
                *cursor += 1;
                if p <= 0.0 || !in_set[w] {
                    continue;
                }
                if index[w] == usize::MAX {
                    call.push((w, 0));
                    descended = true;
                    break;
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            }
            if descended {
                continue;
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                out.push(comp);
            }
            call.pop();
            if let Some(&mut (parent, _)) = call.last_mut() {
                low[parent] = low[parent].min(low[v]);
            }
        }
    }
    out
}

/// Closed (no outgoing edge) SCCs, i.e. the recurrent classes of the chain
/// restricted to `nodes`.
fn closed_classes(rows: &[Vec<(usize, f64)>], nodes: &[usize]) -> Vec<Vec<usize>> {
    sccs(rows, nodes)
        .into_iter()
        .filter(|comp| {
            comp.iter().all(|&v| {
                rows[v]
                    .iter()
                    .all(|&(w, p)| p <= 0.0 || comp.binary_search(&w).is_ok())
            })
        })
        .collect()
}

/// Stationary distribution of the chain restricted to one closed class, by
/// direct solution of the balance equations.
fn class_stationary(rows: &[Vec<(usize, f64)>], class: &[usize]) -> Result<Vec<f64>, EvalError> {
    let k = class.len();
    let pos_of = |v: usize| class.binary_search(&v).unwrap();
    // Rows 0..k-1: balance  sum_i d_i P(j|i) - d_j = 0, last row replaced by
    // normalization.
    let mut a = DMatrix::zeros(k);
    for (ci, &v) in class.iter().enumerate() {
        for &(w, p) in &rows[v] {
            if p > 0.0 {
                let cj = pos_of(w);
                if cj < k - 1 {
                    let cur = a.at(cj, ci);
                    a.set(cj, ci, cur + p);
                }
            }
        }
    }
    for j in 0..k - 1 {
        let cur = a.at(j, j);
        a.set(j, j, cur - 1.0);
    }
    for i in 0..k {
        a.set(k - 1, i, 1.0);
    }
    let mut b = vec![0.0; k];
    b[k - 1] = 1.0;
    let d = linalg::solve(a, b, 1e-13).ok_or(EvalError::SingularBalance)?;
    Ok(d)
}

/// Dense fallback: recurrent classes, absorption probabilities from the
/// start state, and the absorption-weighted mixture of class stationaries.
fn stationary_dense(
    rows: &[Vec<(usize, f64)>],
    start: usize,
    reachable: &[usize],
) -> Result<Vec<f64>, EvalError> {
    let classes = closed_classes(rows, reachable);
    let mut weights = vec![0.0; classes.len()];

    let mut class_of = vec![usize::MAX; rows.len()];
    for (k, class) in classes.iter().enumerate() {
        for &v in class {
            class_of[v] = k;
        }
    }

    if class_of[start] != usize::MAX {
        weights[class_of[start]] = 1.0;
    } else if classes.len() == 1 {
        weights[0] = 1.0;
    } else {
        // Absorption probabilities: solve (I - P_TT) u_k = P_T->k 1 on the
        // transient part, one right-hand side per class.
        let transient: Vec<usize> = reachable
            .iter()
            .copied()
            .filter(|&v| class_of[v] == usize::MAX)
            .collect();
        let t = transient.len();
        let pos_of = |v: usize| transient.binary_search(&v).unwrap();
        for (k, _) in classes.iter().enumerate() {
            let mut a = DMatrix::zeros(t);
            let mut b = vec![0.0; t];
            for (ti, &v) in transient.iter().enumerate() {
                a.set(ti, ti, 1.0);
                for &(w, p) in &rows[v] {
                    if p <= 0.0 {
                        continue;
                    }
                    if class_of[w] == usize::MAX {
                        let tj = pos_of(w);
                        let cur = a.at(ti, tj);
                        a.set(ti, tj, cur - p);
                    } else if class_of[w] == k {
                        b[ti] += p;
                    }
                }
            }
            let u = linalg::solve(a, b, 1e-13).ok_or(EvalError::SingularBalance)?;
            weights[k] = u[pos_of(start)];
        }
    }

    let mut d = vec![0.0; rows.len()];
    for (k, class) in classes.iter().enumerate() {
        if weights[k] <= 0.0 {
            continue;
        }
        let dk = class_stationary(rows, class)?;
        for (ci, &v) in class.iter().enumerate() {
            d[v] += weights[k] * dk[ci];
        }
    }
    Ok(d)
}

/// Stationary distribution of an arbitrary sparse row-stochastic chain,
/// started from `start`: power iteration with a dense fallback on small
/// chains.
pub fn stationary_from(rows: &[Vec<(usize, f64)>], start: usize) -> Result<Vec<f64>, EvalError> {
    let small = rows.len() < DENSE_FALLBACK_LIMIT;
    let cap = if small {
        POWER_ITER_SMALL
    } else {
        POWER_ITER_LARGE
    };
    match power_iteration(rows, start, cap) {
        Ok(d) => Ok(d),
        Err(residual) => {
            if small {
                let reachable = reachable_from(rows, start);
                let d = stationary_dense(rows, start, &reachable)?;
                let check = invariance_residual(rows, &d);
                if check > STATIONARY_TOL {
                    return Err(EvalError::NotConverged { residual: check });
                }
                Ok(d)
            } else {
                Err(EvalError::NotConverged { residual })
            }
        }
    }
}

/// Stationary distribution of the chain induced by a policy, from the cold
/// start (empty battery, empty queues).
pub fn stationary_distribution(
    model: &TransitionModel,
    policy: &Policy,
) -> Result<Vec<f64>, EvalError> {
    if policy.num_states() != model.num_states() {
        return Err(EvalError::StateCount {
            policy: policy.num_states(),
            model: model.num_states(),
        });
    }
    let rows = induced_chain(model, policy);
    stationary_from(&rows, 0)
}

/// Closed-form long-run metrics of a policy under the model.
pub fn evaluate_policy(model: &TransitionModel, policy: &Policy) -> Result<Metrics, EvalError> {
    let d = stationary_distribution(model, policy)?;
    let mut thr = [0.0f64; 2];
    let mut loss = [0.0f64; 2];
    let mut drops = [0.0f64; 2];
    let mut objective = 0.0;
    let mut mean_queue = [0.0f64; 2];

    for (s, &mass) in d.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let st = model.space.state_at(s);
        mean_queue[0] += mass * st.q_lp as f64;
        mean_queue[1] += mass * st.q_hp as f64;
        let probs = policy.action_probs(s);
        for a in Action::ALL {
            let pa = probs[a.index()];
            if pa == 0.0 {
                continue;
            }
            let row = model.row(s, a);
            let w = mass * pa;
            thr[0] += w * row.thr_lp;
            thr[1] += w * row.thr_hp;
            loss[0] += w * row.cost_lp;
            loss[1] += w * row.cost_hp;
            drops[0] += w * row.drop_lp;
            drops[1] += w * row.drop_hp;
            objective += w * row.reward;
        }
    }

    let mut delay = [None; 2];
    let mut drop_rate = [0.0f64; 2];
    for (i, class) in PriorityClass::BOTH.into_iter().enumerate() {
        let mean_arrival = model.mean_arrival(class);
        if mean_arrival > 0.0 {
            drop_rate[i] = drops[i] / mean_arrival;
        }
        let admitted = mean_arrival - drops[i];
        if admitted > 1e-12 {
            delay[i] = Some(mean_queue[i] / admitted);
        }
    }

    Ok(Metrics {
        throughput_lp: thr[0],
        throughput_hp: thr[1],
        loss_lp: loss[0],
        loss_hp: loss[1],
        drop_rate_lp: drop_rate[0],
        drop_rate_hp: drop_rate[1],
        delay_lp: delay[0],
        delay_hp: delay[1],
        objective,
    })
}

/// Optimal average reward per slot of the unconstrained model under the
/// given objective weights, by relative value iteration. Requires a unichain
/// model; converges to span tolerance [`RVI_SPAN_TOL`].
pub fn relative_value_iteration(
    model: &TransitionModel,
    weight_lp: f64,
    weight_hp: f64,
) -> Result<f64, EvalError> {
    let n = model.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for _ in 0..RVI_MAX_ITER {
        let mut delta_min = f64::INFINITY;
        let mut delta_max = f64::NEG_INFINITY;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in Action::ALL {
                let row = model.row(s, a);
                let mut v = weight_lp * row.thr_lp + weight_hp * row.thr_hp + DAMPING * h[s];
                for &(j, p) in &row.next {
                    v += (1.0 - DAMPING) * p * h[j];
                }
                if v > best {
                    best = v;
                }
            }
            next[s] = best;
            let delta = best - h[s];
            delta_min = delta_min.min(delta);
            delta_max = delta_max.max(delta);
        }
        span = delta_max - delta_min;
        if span <= RVI_SPAN_TOL {
            return Ok(0.5 * (delta_max + delta_min));
        }
        let anchor = next[0];
        for (hv, nv) in h.iter_mut().zip(&next) {
            *hv = nv - anchor;
        }
    }
    Err(EvalError::RviNotConverged { span })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, SaRow};
    use crate::params::LossLimit;
    use crate::presets::{reference_params, tiny_params};
    use crate::state::{State, StateSpace};

    fn no_arrival_params() -> crate::params::ModelParams {
        let mut p = tiny_params();
        p.arrival_lp = vec![1.0];
        p.arrival_hp = vec![1.0];
        p.loss_limit_lp = LossLimit::Unbounded;
        p.loss_limit_hp = LossLimit::Unbounded;
        p
    }

    #[test]
    fn harvest_always_with_no_arrivals_saturates_battery() {
        let model = build_model(&no_arrival_params()).unwrap();
        let policy = Policy::deterministic(&vec![crate::state::Action::Harvest; 12]);
        let d = stationary_distribution(&model, &policy).unwrap();
        let full = model.space.index_of(State {
            e: 2,
            q_lp: 0,
            q_hp: 0,
        });
        assert!((d[full] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_state_symmetric_chain_is_uniform() {
        // A deterministic period-two swap; damping must still find (1/2, 1/2).
        let rows = vec![vec![(1usize, 1.0)], vec![(0usize, 1.0)]];
        let d = stationary_from(&rows, 0).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-10);
        assert!((d[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn absorbing_split_gives_mixture() {
        // 0 -> {1 w.p. 0.3, 2 w.p. 0.7}, both absorbing.
        let rows = vec![
            vec![(1usize, 0.3), (2usize, 0.7)],
            vec![(1usize, 1.0)],
            vec![(2usize, 1.0)],
        ];
        let d = stationary_from(&rows, 0).unwrap();
        assert!(d[0].abs() < 1e-10);
        assert!((d[1] - 0.3).abs() < 1e-10);
        assert!((d[2] - 0.7).abs() < 1e-10);
        // The dense path must agree.
        let reach = super::reachable_from(&rows, 0);
        let dd = super::stationary_dense(&rows, 0, &reach).unwrap();
        for (a, b) in d.iter().zip(&dd) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Independent oracle: Gaussian elimination on the full balance
    /// equations of the reachable set, written directly against the chain.
    fn oracle_stationary(rows: &[Vec<(usize, f64)>], start: usize) -> Vec<f64> {
        let mut reach = vec![start];
        let mut seen = vec![false; rows.len()];
        seen[start] = true;
        let mut head = 0;
        while head < reach.len() {
            let v = reach[head];
            head += 1;
            for &(w, p) in &rows[v] {
                if p > 0.0 && !seen[w] {
                    seen[w] = true;
                    reach.push(w);
                }
            }
        }
        reach.sort_unstable();
        let k = reach.len();
        let pos = |v: usize| reach.binary_search(&v).unwrap();
        // Build (P' - I) with the last row replaced by the normalization.
        let mut a = vec![vec![0.0f64; k]; k];
        for &v in &reach {
            for &(w, p) in &rows[v] {
                if p > 0.0 {
                    a[pos(w)][pos(v)] += p;
                }
            }
        }
        for j in 0..k {
            a[j][j] -= 1.0;
        }
        for j in 0..k {
            a[k - 1][j] = 1.0;
        }
        let mut b = vec![0.0; k];
        b[k - 1] = 1.0;
        // Plain Gaussian elimination with partial pivoting.
        for col in 0..k {
            let piv = (col..k).max_by(|&i, &j| {
                a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
            }).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..k {
                let f = a[r][col] / a[col][col];
                for c in col..k {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        for col in (0..k).rev() {
            let mut acc = b[col];
            for c in col + 1..k {
                acc -= a[col][c] * b[c];
            }
            b[col] = acc / a[col][col];
        }
        let mut d = vec![0.0; rows.len()];
        for (ci, &v) in reach.iter().enumerate() {
            d[v] = b[ci];
        }
        d
    }

    #[test]
    fn tiny_uniform_policy_matches_linear_solve_oracle() {
        let model = build_model(&tiny_params()).unwrap();
        let policy = Policy::uniform(model.num_states());
        let rows = induced_chain(&model, &policy);
        let d = stationary_distribution(&model, &policy).unwrap();
        let oracle = oracle_stationary(&rows, 0);
        for (a, b) in d.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let sum: f64 = d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(invariance_residual(&rows, &d) <= STATIONARY_TOL);
    }

    #[test]
    fn reference_uniform_policy_distribution_is_invariant() {
        let model = build_model(&reference_params()).unwrap();
        let policy = Policy::uniform(model.num_states());
        let rows = induced_chain(&model, &policy);
        let d = stationary_distribution(&model, &policy).unwrap();
        let sum: f64 = d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(invariance_residual(&rows, &d) <= STATIONARY_TOL);
    }

    #[test]
    fn no_arrivals_mean_zero_throughput_and_loss() {
        let model = build_model(&no_arrival_params()).unwrap();
        let policy = Policy::uniform(model.num_states());
        let m = evaluate_policy(&model, &policy).unwrap();
        assert_eq!(m.throughput_lp, 0.0);
        assert_eq!(m.throughput_hp, 0.0);
        assert_eq!(m.loss_lp, 0.0);
        assert_eq!(m.loss_hp, 0.0);
        assert_eq!(m.delay_lp, None);
        assert_eq!(m.delay_hp, None);
    }

    #[test]
    fn objective_is_weighted_throughput() {
        let model = build_model(&tiny_params()).unwrap();
        let policy = Policy::uniform(model.num_states());
        let m = evaluate_policy(&model, &policy).unwrap();
        let expect = 0.1 * m.throughput_lp + 0.9 * m.throughput_hp;
        assert!((m.objective - expect).abs() < 1e-9);
        assert!(m.throughput_lp > 0.0);
        assert!(m.throughput_hp > 0.0);
    }

    fn single_state_model(reward: f64) -> TransitionModel {
        let space = StateSpace::from_bounds(0, 0, 0);
        let rows = (0..3)
            .map(|_| SaRow {
                next: vec![(0, 1.0)],
                thr_lp: reward,
                thr_hp: 0.0,
                reward,
                cost_lp: 0.0,
                cost_hp: 0.0,
                drop_lp: 0.0,
                drop_hp: 0.0,
            })
            .collect();
        TransitionModel::from_parts(space, 1.0, 0.0, 0.0, 0.0, rows)
    }

    #[test]
    fn rvi_on_single_state_self_loop() {
        let model = single_state_model(0.37);
        let gain = relative_value_iteration(&model, 1.0, 0.0).unwrap();
        assert!((gain - 0.37).abs() < 1e-9);
    }

    #[test]
    fn rvi_zero_reward_model_has_zero_gain() {
        let model = build_model(&tiny_params()).unwrap();
        let gain = relative_value_iteration(&model, 0.0, 0.0).unwrap();
        assert!(gain.abs() < 1e-9);
    }
}
