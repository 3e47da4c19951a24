//! CSV artifact emission and the policy file format.
//!
//! Every numeric value is printed with nine significant digits; `nan` marks
//! undefined quantities (infeasible rows, delays with no admitted packets).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use ehn_core::{Action, Metrics, Policy, SimTrace, SolveReport, State, StateSpace};

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("policy file covers {got} states, expected {expected}")]
    StateCount { got: usize, expected: usize },
    #[error("line {line}: action probabilities sum to {sum}, not 1")]
    RowSum { line: usize, sum: f64 },
}

/// Nine significant digits; `nan` for undefined values.
pub fn fmt9(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.8e}")
    }
}

pub fn fmt9_opt(v: Option<f64>) -> String {
    fmt9(v.unwrap_or(f64::NAN))
}

/// `policy.csv`: one row per state in canonical order.
pub const POLICY_HEADER: &str = "e,q_lp,q_hp,p_harvest,p_tx_lp,p_tx_hp";

pub fn policy_to_csv(space: &StateSpace, policy: &Policy) -> String {
    let mut out = String::new();
    out.push_str(POLICY_HEADER);
    out.push('\n');
    for (i, s) in space.iter().enumerate() {
        let row = policy.action_probs(i);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.e,
            s.q_lp,
            s.q_hp,
            fmt9(row[0]),
            fmt9(row[1]),
            fmt9(row[2])
        );
    }
    out
}

pub fn write_policy(path: &Path, space: &StateSpace, policy: &Policy) -> io::Result<()> {
    fs::write(path, policy_to_csv(space, policy))
}

/// Read a policy file back; rows may appear in any order but must cover each
/// state exactly once. Probabilities are renormalized to absorb the printed
/// precision, rejecting rows off by more than 1e-6.
pub fn read_policy(path: &Path, space: &StateSpace) -> Result<Policy, PolicyFileError> {
    let text = fs::read_to_string(path)?;
    parse_policy(&text, space)
}

pub fn parse_policy(text: &str, space: &StateSpace) -> Result<Policy, PolicyFileError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == POLICY_HEADER => {}
        other => {
            return Err(PolicyFileError::Parse {
                line: 1,
                reason: format!(
                    "expected header `{POLICY_HEADER}`, got `{}`",
                    other.map(|(_, h)| h).unwrap_or("")
                ),
            })
        }
    }
    let mut rows: Vec<Option<[f64; Action::COUNT]>> = vec![None; space.len()];
    let mut filled = 0usize;
    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 6 {
            return Err(PolicyFileError::Parse {
                line,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_int = |f: &str| {
            f.trim().parse::<u32>().map_err(|_| PolicyFileError::Parse {
                line,
                reason: format!("`{f}` is not an integer"),
            })
        };
        let parse_prob = |f: &str| {
            f.trim().parse::<f64>().map_err(|_| PolicyFileError::Parse {
                line,
                reason: format!("`{f}` is not a number"),
            })
        };
        let state = State {
            e: parse_int(fields[0])?,
            q_lp: parse_int(fields[1])?,
            q_hp: parse_int(fields[2])?,
        };
        if !space.contains(state) {
            return Err(PolicyFileError::Parse {
                line,
                reason: format!("state {state} is outside the model"),
            });
        }
        let mut row = [
            parse_prob(fields[3])?,
            parse_prob(fields[4])?,
            parse_prob(fields[5])?,
        ];
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < -1e-9) {
            return Err(PolicyFileError::RowSum { line, sum });
        }
        for p in &mut row {
            *p = p.max(0.0) / sum;
        }
        let index = space.index_of(state);
        if rows[index].replace(row).is_some() {
            return Err(PolicyFileError::Parse {
                line,
                reason: format!("state {state} appears twice"),
            });
        }
        filled += 1;
    }
    if filled != space.len() {
        return Err(PolicyFileError::StateCount {
            got: filled,
            expected: space.len(),
        });
    }
    let rows: Vec<[f64; Action::COUNT]> = rows.into_iter().map(Option::unwrap).collect();
    Policy::from_rows(rows).map_err(|e| PolicyFileError::Parse {
        line: 0,
        reason: e.to_string(),
    })
}

pub const REPORT_HEADER: &str = "status,objective,loss_lp,loss_hp,iterations,wall_time_s";

pub fn report_to_csv(report: &SolveReport) -> String {
    format!(
        "{REPORT_HEADER}\n{},{},{},{},{},{}\n",
        report.status.label(),
        fmt9(report.objective),
        fmt9(report.loss_lp),
        fmt9(report.loss_hp),
        report.iterations,
        fmt9(report.wall_time.as_secs_f64()),
    )
}

pub const METRICS_HEADER: &str =
    "thr_lp,thr_hp,loss_lp,loss_hp,drop_rate_lp,drop_rate_hp,delay_lp,delay_hp,objective";

pub fn metrics_to_csv(m: &Metrics) -> String {
    format!(
        "{METRICS_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
        fmt9(m.throughput_lp),
        fmt9(m.throughput_hp),
        fmt9(m.loss_lp),
        fmt9(m.loss_hp),
        fmt9(m.drop_rate_lp),
        fmt9(m.drop_rate_hp),
        fmt9_opt(m.delay_lp),
        fmt9_opt(m.delay_hp),
        fmt9(m.objective),
    )
}

pub const SIM_METRICS_HEADER: &str = "thr_lp,thr_lp_se,thr_hp,thr_hp_se,\
loss_lp,loss_lp_se,loss_hp,loss_hp_se,\
loss_cost_lp,loss_cost_lp_se,loss_cost_hp,loss_cost_hp_se,\
delay_lp,delay_lp_se,delay_hp,delay_hp_se,\
arrived_lp,dropped_lp,delivered_lp,arrived_hp,dropped_hp,delivered_hp,\
measured_slots,seed,rng";

pub fn sim_metrics_to_csv(t: &SimTrace) -> String {
    let mut out = String::new();
    out.push_str(SIM_METRICS_HEADER);
    out.push('\n');
    let est = |e: ehn_core::sim::Estimate| format!("{},{}", fmt9(e.value), fmt9(e.se));
    let opt_est = |e: Option<ehn_core::sim::Estimate>| match e {
        Some(e) => est(e),
        None => "nan,nan".to_string(),
    };
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        est(t.throughput_lp),
        est(t.throughput_hp),
        est(t.loss_lp),
        est(t.loss_hp),
        est(t.loss_cost_lp),
        est(t.loss_cost_hp),
        opt_est(t.delay_lp),
        opt_est(t.delay_hp),
        t.arrived_lp,
        t.dropped_lp,
        t.delivered_lp,
        t.arrived_hp,
        t.dropped_hp,
        t.delivered_hp,
        format_args!("{},{},{}", t.measured_slots, t.seed, t.rng_algorithm),
    );
    out
}

pub const TRACE_HEADER: &str = "slot,e,q_lp,q_hp,action,tx_success,arr_lp,arr_hp,drop_lp,drop_hp";

pub fn trace_to_csv(records: &[ehn_core::sim::SlotRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 32 + TRACE_HEADER.len() + 1);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.slot,
            r.state.e,
            r.state.q_lp,
            r.state.q_hp,
            r.action.index(),
            u8::from(r.tx_success),
            r.arrivals_lp,
            r.arrivals_hp,
            r.drops_lp,
            r.drops_hp
        );
    }
    out
}

pub const WEIGHT_SWEEP_HEADER: &str =
    "w_hp,thr_lp,thr_hp,delay_lp,delay_hp,loss_lp,loss_hp,objective,status";

/// One weight-sweep row; metric fields are NaN when the point is infeasible.
pub struct WeightRow {
    pub w_hp: f64,
    pub metrics: Option<Metrics>,
}

pub fn weight_sweep_to_csv(rows: &[WeightRow]) -> String {
    let mut out = String::new();
    out.push_str(WEIGHT_SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        match &row.metrics {
            Some(m) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},optimal",
                    fmt9(row.w_hp),
                    fmt9(m.throughput_lp),
                    fmt9(m.throughput_hp),
                    fmt9_opt(m.delay_lp),
                    fmt9_opt(m.delay_hp),
                    fmt9(m.loss_lp),
                    fmt9(m.loss_hp),
                    fmt9(m.objective),
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{},nan,nan,nan,nan,nan,nan,nan,infeasible",
                    fmt9(row.w_hp)
                );
            }
        }
    }
    out
}

pub const ARRIVAL_SWEEP_HEADER: &str =
    "rate,opt_loss_lp,opt_loss_hp,static_loss_lp,static_loss_hp,status";

/// One arrival-sweep row; optimal-policy losses are NaN when infeasible, the
/// static baseline is always evaluated.
pub struct ArrivalRow {
    pub rate: f64,
    pub optimal: Option<(f64, f64)>,
    pub static_loss: (f64, f64),
}

pub fn arrival_sweep_to_csv(rows: &[ArrivalRow]) -> String {
    let mut out = String::new();
    out.push_str(ARRIVAL_SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let (opt_lp, opt_hp, status) = match row.optimal {
            Some((lp, hp)) => (lp, hp, "optimal"),
            None => (f64::NAN, f64::NAN, "infeasible"),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{status}",
            fmt9(row.rate),
            fmt9(opt_lp),
            fmt9(opt_hp),
            fmt9(row.static_loss.0),
            fmt9(row.static_loss.1),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(0.15), "1.50000000e-1");
        assert_eq!(fmt9(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt9(f64::NAN), "nan");
        assert_eq!(fmt9_opt(None), "nan");
        // Values round-trip through f64 parsing at this precision.
        let v: f64 = fmt9(0.8415).parse().unwrap();
        assert!((v - 0.8415).abs() < 1e-9);
    }

    #[test]
    fn policy_roundtrip() {
        let space = StateSpace::from_bounds(1, 1, 1);
        let policy = Policy::uniform(space.len());
        let text = policy_to_csv(&space, &policy);
        let back = parse_policy(&text, &space).unwrap();
        for s in 0..space.len() {
            for (a, b) in back.action_probs(s).iter().zip(policy.action_probs(s)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        back.validate().unwrap();
    }

    #[test]
    fn policy_parse_rejects_bad_rows() {
        let space = StateSpace::from_bounds(1, 0, 0);
        let text = format!("{POLICY_HEADER}\n0,0,0,0.5,0.1,0.1\n1,0,0,1,0,0\n");
        match parse_policy(&text, &space) {
            Err(PolicyFileError::RowSum { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{POLICY_HEADER}\n0,0,0,1,0,0\n");
        match parse_policy(&text, &space) {
            Err(PolicyFileError::StateCount { got: 1, expected: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
