//! The five experiment operations behind the CLI subcommands.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use ehn_core::eval::EvalError;
use ehn_core::sim::SimError;
use ehn_core::{
    build_model, evaluate_policy, simulate, solve_cmdp, static_policy, CmdpOutcome, Metrics,
    ModelError, ModelParams, Policy, SimConfig, SolverError, TransitionModel,
};

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{self, ArrivalRow, PolicyFileError, WeightRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    PolicyFile(#[from] PolicyFileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("the configured loss bounds are infeasible")]
    Infeasible,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// Process exit code: 2 input error, 3 infeasible, 4 numerical failure,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Model(_)
            | CliError::PolicyFile(_)
            | CliError::Sim(_) => 2,
            CliError::Infeasible => 3,
            CliError::Solver(_) | CliError::Eval(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn solve_to_policy(
    model: &TransitionModel,
    params: &ModelParams,
) -> Result<(Policy, ehn_core::SolveReport), CliError> {
    match solve_cmdp(model, params.loss_limit_lp, params.loss_limit_hp)? {
        CmdpOutcome::Optimal { policy, report, .. } => Ok((policy, report)),
        CmdpOutcome::Infeasible { .. } => Err(CliError::Infeasible),
    }
}

/// Load the policy to operate on: an explicit file when given, otherwise a
/// fresh solve.
fn resolve_policy(
    model: &TransitionModel,
    params: &ModelParams,
    policy_path: Option<&Path>,
) -> Result<Policy, CliError> {
    match policy_path {
        Some(path) => Ok(output::read_policy(path, &model.space)?),
        None => Ok(solve_to_policy(model, params)?.0),
    }
}

/// Solve the configured model; write `policy.csv` and `report.csv`. An
/// infeasible model writes only the report row and exits nonzero.
pub fn run_solve(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let model = build_model(&cfg.params)?;
    ensure_dir(out)?;
    match solve_cmdp(&model, cfg.params.loss_limit_lp, cfg.params.loss_limit_hp)? {
        CmdpOutcome::Optimal { policy, report, .. } => {
            output::write_policy(&out.join("policy.csv"), &model.space, &policy)?;
            fs::write(out.join("report.csv"), output::report_to_csv(&report))?;
            println!(
                "solved: objective {}, loss_lp {}, loss_hp {} ({} iterations, {:.3}s)",
                output::fmt9(report.objective),
                output::fmt9(report.loss_lp),
                output::fmt9(report.loss_hp),
                report.iterations,
                report.wall_time.as_secs_f64()
            );
            Ok(())
        }
        CmdpOutcome::Infeasible { report } => {
            fs::write(out.join("report.csv"), output::report_to_csv(&report))?;
            Err(CliError::Infeasible)
        }
    }
}

/// Evaluate a policy analytically; write `metrics.csv`.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    out: &Path,
    policy_path: Option<&Path>,
) -> Result<(), CliError> {
    let model = build_model(&cfg.params)?;
    let policy = resolve_policy(&model, &cfg.params, policy_path)?;
    let metrics = evaluate_policy(&model, &policy)?;
    ensure_dir(out)?;
    fs::write(out.join("metrics.csv"), output::metrics_to_csv(&metrics))?;
    println!(
        "evaluated: thr_lp {}, thr_hp {}, loss_lp {}, loss_hp {}",
        output::fmt9(metrics.throughput_lp),
        output::fmt9(metrics.throughput_hp),
        output::fmt9(metrics.loss_lp),
        output::fmt9(metrics.loss_hp)
    );
    Ok(())
}

/// Simulate a policy; write `sim_metrics.csv` (and `trace.csv` on request).
#[allow(clippy::too_many_arguments)]
pub fn run_simulate(
    cfg: &ExperimentConfig,
    out: &Path,
    policy_path: Option<&Path>,
    seed: Option<u64>,
    slots: Option<u64>,
    trace: bool,
) -> Result<(), CliError> {
    let model = build_model(&cfg.params)?;
    let policy = resolve_policy(&model, &cfg.params, policy_path)?;
    let sim_cfg = SimConfig {
        slots: slots.unwrap_or(cfg.slots),
        seed: seed.unwrap_or(cfg.seed),
        warmup_slots: cfg.warmup_slots,
        record_slots: trace,
    };
    let result = simulate(&cfg.params, &policy, &sim_cfg)?;
    ensure_dir(out)?;
    fs::write(
        out.join("sim_metrics.csv"),
        output::sim_metrics_to_csv(&result),
    )?;
    if let Some(records) = &result.records {
        fs::write(out.join("trace.csv"), output::trace_to_csv(records))?;
    }
    println!(
        "simulated {} slots (seed {}): thr_lp {} +/- {}, thr_hp {} +/- {}",
        sim_cfg.slots,
        sim_cfg.seed,
        output::fmt9(result.throughput_lp.value),
        output::fmt9(result.throughput_lp.se),
        output::fmt9(result.throughput_hp.value),
        output::fmt9(result.throughput_hp.se)
    );
    Ok(())
}

fn with_weights(params: &ModelParams, w_hp: f64) -> ModelParams {
    let mut p = params.clone();
    p.weight_hp = w_hp;
    p.weight_lp = 1.0 - w_hp;
    p
}

fn with_arrival_rate(params: &ModelParams, rate: f64) -> ModelParams {
    let mut p = params.clone();
    p.arrival_lp = vec![1.0 - rate, rate];
    p.arrival_hp = vec![1.0 - rate, rate];
    p
}

/// Solve and evaluate one weight point; `None` metrics when infeasible.
fn weight_point(params: &ModelParams, w_hp: f64) -> Result<Option<Metrics>, CliError> {
    let point = with_weights(params, w_hp);
    point.validate().map_err(ConfigError::Model)?;
    let model = build_model(&point)?;
    match solve_cmdp(&model, point.loss_limit_lp, point.loss_limit_hp)? {
        CmdpOutcome::Optimal { policy, .. } => Ok(Some(evaluate_policy(&model, &policy)?)),
        CmdpOutcome::Infeasible { .. } => Ok(None),
    }
}

/// Weight sweep: HP weight varies over the configured grid with the weights
/// normalized to sum to one; writes `weight_sweep.csv`.
pub fn run_sweep_weight(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let rows: Vec<Result<WeightRow, CliError>> = cfg
        .sweep_weights
        .par_iter()
        .map(|&w_hp| {
            weight_point(&cfg.params, w_hp).map(|metrics| WeightRow { w_hp, metrics })
        })
        .collect();
    let rows: Vec<WeightRow> = rows.into_iter().collect::<Result<_, _>>()?;
    ensure_dir(out)?;
    fs::write(
        out.join("weight_sweep.csv"),
        output::weight_sweep_to_csv(&rows),
    )?;
    println!("weight sweep: {} points", rows.len());
    Ok(())
}

/// Solve one arrival point and evaluate both the optimal and the static
/// equal-probability policy.
fn arrival_point(params: &ModelParams, rate: f64) -> Result<ArrivalRow, CliError> {
    let point = with_arrival_rate(params, rate);
    point.validate().map_err(ConfigError::Model)?;
    let model = build_model(&point)?;
    let static_metrics = evaluate_policy(&model, &static_policy(model.num_states()))?;
    let optimal = match solve_cmdp(&model, point.loss_limit_lp, point.loss_limit_hp)? {
        CmdpOutcome::Optimal { policy, .. } => {
            let m = evaluate_policy(&model, &policy)?;
            Some((m.loss_lp, m.loss_hp))
        }
        CmdpOutcome::Infeasible { .. } => None,
    };
    Ok(ArrivalRow {
        rate,
        optimal,
        static_loss: (static_metrics.loss_lp, static_metrics.loss_hp),
    })
}

/// Arrival sweep: Bernoulli arrival rate of both classes varies over the
/// configured grid; writes `arrival_sweep.csv` with optimal-policy and
/// static-policy losses.
pub fn run_sweep_arrival(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let rows: Vec<Result<ArrivalRow, CliError>> = cfg
        .sweep_arrivals
        .par_iter()
        .map(|&rate| arrival_point(&cfg.params, rate))
        .collect();
    let rows: Vec<ArrivalRow> = rows.into_iter().collect::<Result<_, _>>()?;
    ensure_dir(out)?;
    fs::write(
        out.join("arrival_sweep.csv"),
        output::arrival_sweep_to_csv(&rows),
    )?;
    println!("arrival sweep: {} points", rows.len());
    Ok(())
}

/// Resolve the output directory: flag wins over config.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.out_dir.clone())
}
