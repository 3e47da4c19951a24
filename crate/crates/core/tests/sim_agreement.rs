//! Consistency between the Monte-Carlo simulator, the analytic evaluator,
//! and the transition model itself.

use std::collections::HashMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use ehn_core::presets::{reference_params, tiny_params};
use ehn_core::{
    build_model, evaluate_policy, simulate, static_policy, Action, Policy, SimConfig,
};

fn close(sim: f64, se: f64, analytic: f64, rel: f64, what: &str) {
    let diff = (sim - analytic).abs();
    assert!(
        diff <= 3.0 * se.max(1e-12),
        "{what}: |{sim} - {analytic}| = {diff} > 3 se ({se})"
    );
    assert!(
        diff <= rel * analytic.abs().max(1e-12),
        "{what}: relative error {diff} vs bound {rel}"
    );
}

#[test]
fn tiny_simulation_matches_analytic_evaluation() {
    let params = tiny_params();
    let model = build_model(&params).unwrap();
    let policy = Policy::uniform(model.num_states());
    let metrics = evaluate_policy(&model, &policy).unwrap();
    let cfg = SimConfig {
        slots: 1_000_000,
        seed: 20_240_817,
        warmup_slots: 10_000,
        record_slots: false,
    };
    let trace = simulate(&params, &policy, &cfg).unwrap();

    close(
        trace.throughput_lp.value,
        trace.throughput_lp.se,
        metrics.throughput_lp,
        0.01,
        "lp throughput",
    );
    close(
        trace.throughput_hp.value,
        trace.throughput_hp.se,
        metrics.throughput_hp,
        0.01,
        "hp throughput",
    );
    // Dropped/arrived against the expected-drops rate, and the per-slot
    // loss-cost average against the constraint quantity.
    close(
        trace.loss_lp.value,
        trace.loss_lp.se,
        metrics.drop_rate_lp,
        0.05,
        "lp drop rate",
    );
    close(
        trace.loss_hp.value,
        trace.loss_hp.se,
        metrics.drop_rate_hp,
        0.05,
        "hp drop rate",
    );
    close(
        trace.loss_cost_lp.value,
        trace.loss_cost_lp.se,
        metrics.loss_lp,
        0.05,
        "lp loss cost",
    );
    close(
        trace.loss_cost_hp.value,
        trace.loss_cost_hp.se,
        metrics.loss_hp,
        0.05,
        "hp loss cost",
    );
}

#[test]
fn littles_law_delay_matches_per_packet_sojourn() {
    let params = tiny_params();
    let model = build_model(&params).unwrap();
    let policy = Policy::uniform(model.num_states());
    let metrics = evaluate_policy(&model, &policy).unwrap();
    let cfg = SimConfig {
        slots: 1_000_000,
        seed: 7_031,
        warmup_slots: 10_000,
        record_slots: false,
    };
    let trace = simulate(&params, &policy, &cfg).unwrap();
    for (label, analytic, empirical) in [
        ("lp", metrics.delay_lp, trace.delay_lp),
        ("hp", metrics.delay_hp, trace.delay_hp),
    ] {
        let analytic = analytic.unwrap();
        let empirical = empirical.unwrap();
        let diff = (empirical.value - analytic).abs();
        assert!(
            diff <= 3.0 * empirical.se,
            "{label} delay: |{} - {analytic}| > 3 se ({})",
            empirical.value,
            empirical.se
        );
    }
}

#[test]
fn static_policy_violates_hp_bound_at_high_arrivals() {
    let mut params = reference_params();
    params.arrival_lp = vec![0.7, 0.3];
    params.arrival_hp = vec![0.7, 0.3];
    let model = build_model(&params).unwrap();
    let policy = static_policy(model.num_states());
    let metrics = evaluate_policy(&model, &policy).unwrap();
    assert!(
        metrics.loss_hp > 0.1,
        "static policy loss_hp {} should exceed the 0.1 bound",
        metrics.loss_hp
    );
}

/// Empirical next-state frequencies follow the model's transition rows:
/// chi-square goodness of fit must not reject at p = 0.001 on any
/// (state, action) pair visited at least 1e5 times.
#[test]
fn empirical_transitions_match_model_rows() {
    let params = tiny_params();
    let model = build_model(&params).unwrap();
    let policy = Policy::uniform(model.num_states());
    let cfg = SimConfig {
        slots: 6_000_000,
        seed: 424_242,
        warmup_slots: 0,
        record_slots: true,
    };
    let trace = simulate(&params, &policy, &cfg).unwrap();
    let records = trace.records.unwrap();
    let space = model.space;

    let mut counts: HashMap<(usize, Action), HashMap<usize, u64>> = HashMap::new();
    for pair in records.windows(2) {
        let from = space.index_of(pair[0].state);
        let to = space.index_of(pair[1].state);
        *counts
            .entry((from, pair[0].action))
            .or_default()
            .entry(to)
            .or_insert(0) += 1;
    }

    let mut tested = 0;
    for ((s, a), next_counts) in counts {
        let total: u64 = next_counts.values().sum();
        if total < 100_000 {
            continue;
        }
        tested += 1;
        let row = model.row(s, a);
        // Every observed successor must be in the model's support.
        for &to in next_counts.keys() {
            assert!(
                row.next.iter().any(|&(j, _)| j == to),
                "observed transition ({s}, {a:?}) -> {to} outside model support"
            );
        }
        let mut statistic = 0.0;
        for &(j, p) in &row.next {
            let expected = total as f64 * p;
            let observed = next_counts.get(&j).copied().unwrap_or(0) as f64;
            statistic += (observed - expected).powi(2) / expected;
        }
        let dof = (row.next.len() - 1).max(1) as f64;
        let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.999);
        assert!(
            statistic <= critical,
            "({s}, {a:?}): chi-square {statistic:.2} exceeds {critical:.2} at dof {dof} over {total} visits"
        );
    }
    assert!(tested >= 10, "only {tested} pairs reached 1e5 visits");
}
