//! Sparse linear programs and a self-contained two-phase revised simplex.
//!
//! The solver keeps an explicit dense basis inverse and prices columns with
//! Dantzig's rule. Ratio-test ties — pervasive in the heavily degenerate
//! programs produced by occupation measures — are broken toward the largest
//! pivot element for numerical stability; when the objective stalls long
//! enough to suggest cycling, pivoting falls back to Bland's rule until it
//! improves again. The basis is refactorized from the original column data
//! periodically and before the solution is reported, so the returned point
//! satisfies the basic equations to machine precision rather than to
//! accumulated update error.

use thiserror::Error;

use crate::linalg::DMatrix;

/// Sense of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

/// `maximize c'x  s.t.  A x (=|<=) b, x >= 0`, with `A` stored by column.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Maximization coefficients, one per structural variable.
    pub objective: Vec<f64>,
    /// Sparse columns of `A`: `(row, coefficient)` sorted by row.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Optimal structural variables.
    pub x: Vec<f64>,
    /// Optimal value in the maximization sense.
    pub objective: f64,
    pub iterations: u64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// No feasible point: the phase-1 residual that could not be driven to
    /// zero is reported.
    Infeasible { residual: f64, iterations: u64 },
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("simplex iteration limit {limit} reached in phase {phase}")]
    IterationLimit { phase: u8, limit: u64 },
    #[error("objective is unbounded above")]
    Unbounded,
    #[error("basis matrix is numerically singular")]
    SingularBasis,
    #[error("basic solution lost feasibility (min component {min_component:.3e})")]
    LostFeasibility { min_component: f64 },
}

const EPS_ENTER: f64 = 1e-9;
const EPS_PIVOT: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const REFACTOR_EVERY: u64 = 1024;
/// Cumulative pivot-growth budget between refactorizations.
const GROWTH_BUDGET: f64 = 1e6;

/// Solve the program; infeasibility is an outcome, numerical failure an error.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    Simplex::new(lp).run()
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    m: usize,
    /// Structural + slack column count; indices `>= n` denote artificials.
    n: usize,
    n_struct: usize,
    /// Sign-adjusted structural and slack columns.
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// Phase-2 minimization costs (negated objective, zero for slacks).
    cost: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Rows found redundant after phase 1. Their artificial stays basic at
    /// level zero and the ratio test must never select them: the whole
    /// transformed row is zero in exact arithmetic, and swapping the
    /// artificial out would leave a structurally singular basis.
    pinned: Vec<bool>,
    binv: DMatrix,
    xb: Vec<f64>,
    iterations: u64,
    max_iterations: u64,
    min_pivot_seen: f64,
    need_refactor: bool,
    iterations_since_refactor: u64,
    /// Product of per-pivot growth factors since the last refactorization;
    /// a cheap proxy for the conditioning of the update chain.
    growth_acc: f64,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Simplex<'a> {
        let m = lp.num_rows();
        let n_struct = lp.num_vars();

        // Orient every row so its right-hand side is nonnegative.
        let mut sign = vec![1.0f64; m];
        let mut rhs = lp.rhs.clone();
        for i in 0..m {
            if rhs[i] < 0.0 {
                assert_eq!(
                    lp.row_kinds[i],
                    RowKind::Eq,
                    "Le rows must have nonnegative right-hand sides"
                );
                sign[i] = -1.0;
                rhs[i] = -rhs[i];
            }
        }

        let mut cols: Vec<Vec<(usize, f64)>> = lp
            .columns
            .iter()
            .map(|col| col.iter().map(|&(r, v)| (r, v * sign[r])).collect())
            .collect();
        let mut cost: Vec<f64> = lp.objective.iter().map(|&c| -c).collect();

        // One slack per inequality row; slacks start basic there.
        let mut basis = Vec::with_capacity(m);
        let mut slack_of_row = vec![usize::MAX; m];
        for i in 0..m {
            if lp.row_kinds[i] == RowKind::Le {
                slack_of_row[i] = cols.len();
                cols.push(vec![(i, 1.0)]);
                cost.push(0.0);
            }
        }
        let n = cols.len();
        let mut in_basis = vec![false; n];
        for i in 0..m {
            if slack_of_row[i] != usize::MAX {
                basis.push(slack_of_row[i]);
                in_basis[slack_of_row[i]] = true;
            } else {
                basis.push(n + i); // artificial
            }
        }

        let max_iterations = 10_000 + 6 * (m as u64 + n as u64);
        Simplex {
            lp,
            m,
            n,
            n_struct,
            cols,
            xb: rhs.clone(),
            rhs,
            cost,
            basis,
            in_basis,
            pinned: vec![false; m],
            binv: DMatrix::identity(m),
            iterations: 0,
            max_iterations,
            min_pivot_seen: f64::INFINITY,
            need_refactor: false,
            iterations_since_refactor: 0,
            growth_acc: 1.0,
        }
    }

    fn run(mut self) -> Result<LpOutcome, LpError> {
        if self.m == 0 {
            // No constraints: optimum is zero unless some coefficient is
            // positive, in which case the program is unbounded.
            if self.lp.objective.iter().any(|&c| c > EPS_ENTER) {
                return Err(LpError::Unbounded);
            }
            return Ok(LpOutcome::Optimal(LpSolution {
                x: vec![0.0; self.n_struct],
                objective: 0.0,
                iterations: 0,
            }));
        }

        // Phase 1: minimize the artificial mass.
        if self.basis.iter().any(|&b| b >= self.n) {
            self.iterate(1)?;
            // A fresh factorization before judging feasibility and
            // redundancy; the update chain is not trustworthy at 1e-9 scale
            // after thousands of pivots.
            self.refactor()?;
            let residual: f64 = (0..self.m)
                .filter(|&r| self.basis[r] >= self.n)
                .map(|r| self.xb[r].max(0.0))
                .sum();
            if residual > FEAS_TOL {
                return Ok(LpOutcome::Infeasible {
                    residual,
                    iterations: self.iterations,
                });
            }
            self.pivot_out_artificials()?;
            for r in 0..self.m {
                if self.basis[r] >= self.n {
                    self.pinned[r] = true;
                    self.xb[r] = 0.0;
                }
            }
        }

        // Phase 2 on the true objective.
        self.iterate(2)?;
        self.refactor()?;

        let mut x = vec![0.0; self.n_struct];
        for r in 0..self.m {
            if self.basis[r] < self.n_struct {
                x[self.basis[r]] = self.xb[r].max(0.0);
            }
        }
        let objective = self
            .lp
            .objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum();
        Ok(LpOutcome::Optimal(LpSolution {
            x,
            objective,
            iterations: self.iterations,
        }))
    }

    fn phase_cost(&self, phase: u8, col: usize) -> f64 {
        if phase == 1 {
            if col >= self.n {
                1.0
            } else {
                0.0
            }
        } else if col >= self.n {
            0.0
        } else {
            self.cost[col]
        }
    }

    fn iterate(&mut self, phase: u8) -> Result<(), LpError> {
        let mut y = vec![0.0; self.m];
        let mut bland = false;
        let mut stall = 0u64;
        // Degenerate pivots are the normal mode of life for these programs:
        // phase 1 alone needs on the order of m of them. Bland's rule is a
        // last resort against genuine cycling, not a degeneracy strategy.
        let stall_limit = 8 * self.m as u64 + 4000;
        let mut best_objective = f64::INFINITY;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit {
                    phase,
                    limit: self.max_iterations,
                });
            }
            if self.need_refactor || (self.iterations > 0 && self.iterations % REFACTOR_EVERY == 0)
            {
                self.refactor()?;
                self.need_refactor = false;
            }

            // Simplex multipliers y' = c_B' B^-1.
            y.fill(0.0);
            for r in 0..self.m {
                let cb = self.phase_cost(phase, self.basis[r]);
                if cb != 0.0 {
                    let row = self.binv.row(r);
                    for (yc, &bc) in y.iter_mut().zip(row) {
                        *yc += cb * bc;
                    }
                }
            }

            // Pricing over structural and slack columns: most negative
            // reduced cost first (smallest index under Bland's rule).
            let mut candidates: Vec<(usize, f64)> = Vec::new();
            for j in 0..self.n {
                if self.in_basis[j] {
                    continue;
                }
                let mut cbar = self.phase_cost(phase, j);
                for &(r, v) in &self.cols[j] {
                    cbar -= y[r] * v;
                }
                if cbar < -EPS_ENTER {
                    candidates.push((j, cbar));
                    if bland {
                        break;
                    }
                }
            }
            if candidates.is_empty() {
                return Ok(());
            }
            candidates.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap());

            // Screen pivot quality over the best few candidates: committing
            // to a pivot whose direction dwarfs its pivot element is what
            // destroys the update chain, so prefer any candidate below the
            // amplification cap and otherwise refactorize and re-price
            // before settling for the least bad one.
            const QUALITY_CAP: f64 = 1e7;
            const TRIALS: usize = 8;
            let mut fallback: Option<(usize, usize, Vec<f64>, f64)> = None;
            let mut chosen: Option<(usize, usize, Vec<f64>)> = None;
            for &(j, _) in candidates.iter().take(TRIALS) {
                let d = self.direction(j);
                let Some(leave) = self.ratio_test(&d, bland) else {
                    if phase == 1 {
                        // The phase-1 objective is bounded below by zero; an
                        // unbounded ray means the numerics have degraded.
                        return Err(LpError::LostFeasibility {
                            min_component: f64::NEG_INFINITY,
                        });
                    }
                    return Err(LpError::Unbounded);
                };
                let max_d = d.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                let quality = max_d / d[leave].abs();
                if quality <= QUALITY_CAP || bland {
                    chosen = Some((j, leave, d));
                    break;
                }
                if fallback
                    .as_ref()
                    .is_none_or(|&(_, _, _, q)| quality < q)
                {
                    fallback = Some((j, leave, d, quality));
                }
            }
            let (enter, leave, d) = match chosen {
                Some(c) => c,
                None => {
                    if self.iterations_since_refactor > 0 {
                        // The directions may simply be stale; recompute them
                        // against a fresh inverse before giving in.
                        self.need_refactor = true;
                        continue;
                    }
                    let (j, leave, d, _) = fallback.expect("at least one candidate was tried");
                    self.need_refactor = true;
                    (j, leave, d)
                }
            };
            self.pivot(enter, leave, &d);
            self.iterations += 1;
            self.iterations_since_refactor += 1;

            let objective: f64 = (0..self.m)
                .map(|r| self.phase_cost(phase, self.basis[r]) * self.xb[r])
                .sum();
            if objective < best_objective - 1e-12 * (1.0 + best_objective.abs()) {
                best_objective = objective;
                stall = 0;
                bland = false;
            } else {
                stall += 1;
                if stall > stall_limit {
                    bland = true;
                }
            }
        }
    }

    /// d = B^-1 a_j, assembled from the sparse column.
    fn direction(&self, col: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.m];
        if col >= self.n {
            let r = col - self.n;
            for i in 0..self.m {
                d[i] = self.binv.at(i, r);
            }
            return d;
        }
        for &(r, v) in &self.cols[col] {
            for i in 0..self.m {
                d[i] += v * self.binv.at(i, r);
            }
        }
        d
    }

    /// Two-pass (Harris) ratio test: first the minimum ratio relaxed by a
    /// small feasibility allowance, then the largest pivot element among the
    /// rows inside the relaxed bound. Trading a bounded per-row overshoot
    /// for pivot quality is what keeps the basis inverse from blowing up on
    /// these heavily degenerate programs. Under Bland's rule the strict
    /// minimum ratio and smallest basis index are used instead. Pinned
    /// (redundant) rows are never eligible.
    fn ratio_test(&self, d: &[f64], bland: bool) -> Option<usize> {
        const DELTA: f64 = 1e-9;
        let allowance = if bland { 0.0 } else { DELTA };
        let mut theta_relaxed = f64::INFINITY;
        let mut any = false;
        for i in 0..self.m {
            if d[i] > EPS_PIVOT && !self.pinned[i] {
                any = true;
                theta_relaxed = theta_relaxed.min((self.xb[i].max(0.0) + allowance) / d[i]);
            }
        }
        if !any {
            return None;
        }
        let mut best: Option<usize> = None;
        for i in 0..self.m {
            if d[i] <= EPS_PIVOT || self.pinned[i] {
                continue;
            }
            let ratio = (self.xb[i] / d[i]).max(0.0);
            if ratio > theta_relaxed {
                continue;
            }
            best = Some(match best {
                None => i,
                Some(k) => {
                    let better = if bland {
                        let ratio_k = (self.xb[k] / d[k]).max(0.0);
                        ratio < ratio_k - 1e-15
                            || (ratio <= ratio_k + 1e-15 && self.basis[i] < self.basis[k])
                    } else {
                        d[i] > d[k]
                    };
                    if better {
                        i
                    } else {
                        k
                    }
                }
            });
        }
        best
    }

    fn pivot(&mut self, enter: usize, leave_row: usize, d: &[f64]) {
        let pivot = d[leave_row];
        self.min_pivot_seen = self.min_pivot_seen.min(pivot.abs());
        let max_d = d.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        self.growth_acc *= (max_d / pivot.abs()).max(1.0);
        if self.growth_acc > GROWTH_BUDGET || pivot.abs() < 1e-6 {
            self.need_refactor = true;
        }
        let theta = (self.xb[leave_row] / pivot).max(0.0);
        for i in 0..self.m {
            if i != leave_row {
                // The Harris allowance lets rows dip slightly negative; the
                // periodic refactorization cleans them up.
                self.xb[i] -= theta * d[i];
            }
        }
        self.xb[leave_row] = theta;

        let inv_pivot = 1.0 / pivot;
        for v in self.binv.row_mut(leave_row) {
            *v *= inv_pivot;
        }
        for i in 0..self.m {
            if i == leave_row || d[i] == 0.0 {
                continue;
            }
            let factor = d[i];
            let (pivot_row, target_row) = if i < leave_row {
                let (head, tail) = self.binv.data.split_at_mut(leave_row * self.m);
                (
                    &tail[..self.m],
                    &mut head[i * self.m..(i + 1) * self.m],
                )
            } else {
                let (head, tail) = self.binv.data.split_at_mut(i * self.m);
                (
                    &head[leave_row * self.m..(leave_row + 1) * self.m],
                    &mut tail[..self.m],
                )
            };
            for (t, &p) in target_row.iter_mut().zip(pivot_row) {
                *t -= factor * p;
            }
        }

        let old = self.basis[leave_row];
        if old < self.n {
            self.in_basis[old] = false;
        }
        self.basis[leave_row] = enter;
        if enter < self.n {
            self.in_basis[enter] = true;
        }
    }

    /// After phase 1, swap any remaining zero-level artificials for the
    /// structural column with the largest eliminable entry. Only rows whose
    /// entire transformed row sits at noise level are genuinely redundant
    /// and keep their artificial pinned; must run on a freshly refactorized
    /// basis so that distinction is trustworthy.
    fn pivot_out_artificials(&mut self) -> Result<(), LpError> {
        for r in 0..self.m {
            if self.basis[r] < self.n {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.in_basis[j] {
                    continue;
                }
                let mut val = 0.0;
                for &(row, v) in &self.cols[j] {
                    val += self.binv.at(r, row) * v;
                }
                if best.is_none_or(|(_, b)| val.abs() > b.abs()) {
                    best = Some((j, val));
                }
            }
            if let Some((j, val)) = best {
                if val.abs() > 1e-9 {
                    let d = self.direction(j);
                    self.pivot(j, r, &d);
                }
            }
        }
        Ok(())
    }

    /// Rebuild B^-1 and the basic solution from the original column data.
    fn refactor(&mut self) -> Result<(), LpError> {
        let mut b = DMatrix::zeros(self.m);
        for (r, &col) in self.basis.iter().enumerate() {
            if col >= self.n {
                b.set(col - self.n, r, 1.0);
            } else {
                for &(row, v) in &self.cols[col] {
                    b.set(row, r, v);
                }
            }
        }
        self.binv = b.inverse(1e-13).ok_or_else(|| {
            if std::env::var_os("EHN_LP_DEBUG").is_some() {
                let artificials = self.basis.iter().filter(|&&c| c >= self.n).count();
                let max_binv = self.binv.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                eprintln!(
                    "refactor singular at iteration {}, {} artificials in basis, min pivot {:.3e}, max binv {:.3e}",
                    self.iterations, artificials, self.min_pivot_seen, max_binv
                );
            }
            LpError::SingularBasis
        })?;
        let mut xb = vec![0.0; self.m];
        for (r, &rhs) in self.rhs.iter().enumerate() {
            if rhs != 0.0 {
                for i in 0..self.m {
                    xb[i] += self.binv.at(i, r) * rhs;
                }
            }
        }
        let min_component = xb.iter().copied().fold(f64::INFINITY, f64::min);
        if std::env::var_os("EHN_LP_DEBUG").is_some() && min_component < -1e-9 {
            let worst = xb
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            eprintln!(
                "refactor at iter {}: min xb {:.3e} at row {} (basis col {}, pinned {}), growth {:.1e}",
                self.iterations, min_component, worst.0, self.basis[worst.0], self.pinned[worst.0], self.growth_acc
            );
        }
        if min_component < -1e-7 {
            return Err(LpError::LostFeasibility { min_component });
        }
        for (i, v) in xb.iter_mut().enumerate() {
            if *v < 0.0 || self.pinned[i] {
                *v = 0.0;
            }
        }
        self.xb = xb;
        self.growth_acc = 1.0;
        self.iterations_since_refactor = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        objective: &[f64],
        rows: &[(&[f64], RowKind, f64)],
    ) -> LinearProgram {
        let n = objective.len();
        let mut columns = vec![Vec::new(); n];
        for (i, (coeffs, _, _)) in rows.iter().enumerate() {
            assert_eq!(coeffs.len(), n);
            for (j, &v) in coeffs.iter().enumerate() {
                if v != 0.0 {
                    columns[j].push((i, v));
                }
            }
        }
        LinearProgram {
            objective: objective.to_vec(),
            columns,
            rhs: rows.iter().map(|&(_, _, b)| b).collect(),
            row_kinds: rows.iter().map(|&(_, k, _)| k).collect(),
        }
    }

    fn optimal(lp_def: &LinearProgram) -> LpSolution {
        match solve(lp_def).unwrap() {
            LpOutcome::Optimal(sol) => sol,
            LpOutcome::Infeasible { residual, .. } => {
                panic!("expected optimal, got infeasible ({residual})")
            }
        }
    }

    #[test]
    fn two_variable_inequalities() {
        let p = lp(
            &[3.0, 2.0],
            &[
                (&[1.0, 1.0], RowKind::Le, 4.0),
                (&[1.0, 3.0], RowKind::Le, 6.0),
            ],
        );
        let sol = optimal(&p);
        assert!((sol.objective - 12.0).abs() < 1e-9);
        assert!((sol.x[0] - 4.0).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
    }

    #[test]
    fn equality_with_redundant_row() {
        let p = lp(
            &[1.0, 0.0],
            &[
                (&[1.0, 1.0], RowKind::Eq, 1.0),
                (&[2.0, 2.0], RowKind::Eq, 2.0),
            ],
        );
        let sol = optimal(&p);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_equality() {
        // -x - y = -1 is x + y = 1 after reorientation.
        let p = lp(
            &[0.0, 1.0],
            &[(&[-1.0, -1.0], RowKind::Eq, -1.0)],
        );
        let sol = optimal(&p);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_system_is_reported() {
        let p = lp(
            &[1.0, 1.0],
            &[
                (&[1.0, 1.0], RowKind::Eq, 2.0),
                (&[1.0, 1.0], RowKind::Le, 1.0),
            ],
        );
        match solve(&p).unwrap() {
            LpOutcome::Infeasible { residual, .. } => assert!(residual > 0.5),
            LpOutcome::Optimal(sol) => panic!("expected infeasible, got {sol:?}"),
        }
    }

    #[test]
    fn unbounded_program_is_an_error() {
        let p = lp(&[1.0, 0.0], &[(&[0.0, 1.0], RowKind::Le, 1.0)]);
        assert!(matches!(solve(&p), Err(LpError::Unbounded)));
    }

    #[test]
    fn beale_cycling_example_terminates() {
        // A classic degenerate program on which textbook Dantzig pivoting
        // cycles without an anti-cycling rule. Optimum is 0.05.
        let p = lp(
            &[0.75, -150.0, 0.02, -6.0],
            &[
                (&[0.25, -60.0, -0.04, 9.0], RowKind::Le, 0.0),
                (&[0.5, -90.0, -0.02, 3.0], RowKind::Le, 0.0),
                (&[0.0, 0.0, 1.0, 0.0], RowKind::Le, 1.0),
            ],
        );
        let sol = optimal(&p);
        assert!((sol.objective - 0.05).abs() < 1e-9, "got {}", sol.objective);
    }

    #[test]
    fn zero_objective_is_trivially_optimal() {
        let p = lp(
            &[0.0, 0.0],
            &[(&[1.0, 1.0], RowKind::Eq, 1.0)],
        );
        let sol = optimal(&p);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn basic_solution_satisfies_rows_to_machine_precision() {
        let p = lp(
            &[1.0, 2.0, 0.5],
            &[
                (&[1.0, 1.0, 1.0], RowKind::Eq, 1.0),
                (&[1.0, -1.0, 0.0], RowKind::Le, 0.25),
                (&[0.0, 1.0, -1.0], RowKind::Le, 0.75),
            ],
        );
        let sol = optimal(&p);
        // Recompute row activities from the reported x.
        let mut activity = vec![0.0; 3];
        for (j, col) in p.columns.iter().enumerate() {
            for &(r, v) in col {
                activity[r] += v * sol.x[j];
            }
        }
        assert!((activity[0] - 1.0).abs() < 1e-12);
        assert!(activity[1] <= 0.25 + 1e-12);
        assert!(activity[2] <= 0.75 + 1e-12);
    }
}
