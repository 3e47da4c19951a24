//! Solve the reference configuration end to end and print the headline
//! numbers. Handy for eyeballing solver behavior:
//!
//! ```text
//! cargo run --release -p ehn-core --example solve_reference
//! ```

use ehn_core::presets::reference_params;
use ehn_core::{build_model, evaluate_policy, solve_cmdp, CmdpOutcome};

fn main() {
    let params = reference_params();
    let model = build_model(&params).unwrap();
    let started = std::time::Instant::now();
    match solve_cmdp(&model, params.loss_limit_lp, params.loss_limit_hp) {
        Ok(CmdpOutcome::Optimal {
            occupation,
            policy,
            report,
        }) => {
            println!(
                "optimal: objective {:.9}, loss_lp {:.9}, loss_hp {:.9}",
                report.objective, report.loss_lp, report.loss_hp
            );
            println!(
                "iterations {}, wall {:.2?}, total {:.3e}, flow residual {:.3e}",
                report.iterations,
                started.elapsed(),
                occupation.total() - 1.0,
                occupation.flow_residual(&model)
            );
            let metrics = evaluate_policy(&model, &policy).unwrap();
            println!(
                "evaluated: thr_lp {:.6} thr_hp {:.6} delay_lp {:?} delay_hp {:?}",
                metrics.throughput_lp, metrics.throughput_hp, metrics.delay_lp, metrics.delay_hp
            );
        }
        Ok(CmdpOutcome::Infeasible { report }) => {
            println!("infeasible after {} iterations", report.iterations);
        }
        Err(err) => {
            println!("solver error: {err}");
        }
    }
}
