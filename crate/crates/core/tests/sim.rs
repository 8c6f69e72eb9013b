mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use vecsim_core::fleet::{FleetConfig, WorkloadConfig};
use vecsim_core::forecast::{CountingForecaster, ProfileForecaster};
use vecsim_core::scheduler::SchedulerKind;
use vecsim_core::sim::{
    recovery_accounting, run_simulation, AttemptOutcome, Outcome, SimConfig, SimInputs, SimReport,
};

fn run(world: &common::World, kind: SchedulerKind, cfg: &SimConfig, seed: u64) -> (SimReport, usize) {
    let f = CountingForecaster::new(ProfileForecaster::new(&world.fleet));
    let inputs = SimInputs {
        fleet: &world.fleet,
        traces: &world.traces,
        workloads: &world.workloads,
        clusters: &world.clusters,
        forecaster: &f,
    };
    let rep = run_simulation(&inputs, kind, cfg, seed).unwrap();
    (rep, f.calls())
}

fn small_world(seed: u64, nodes: usize, workflows: usize) -> common::World {
    let fleet = FleetConfig { node_count: nodes, horizon_hours: 24 * 21, ..FleetConfig::default() };
    let start = fleet.start_epoch + 24 * 14 * 3600;
    let wl = WorkloadConfig { count: workflows, window_start: start, window_hours: 24.0, ..WorkloadConfig::default() };
    common::world(&fleet, &wl, seed)
}

fn check_invariants(world: &common::World, rep: &SimReport, calls: usize) {
    // conservation: one record per submitted workflow
    let ids: BTreeSet<u64> = rep.records.iter().map(|r| r.workflow_id).collect();
    assert_eq!(ids.len(), world.workloads.len());
    assert!(world.workloads.iter().all(|w| ids.contains(&w.workflow_id)));

    let mut busy: BTreeMap<usize, Vec<(i64, i64)>> = BTreeMap::new();
    for r in &rep.records {
        let w = world.workloads.iter().find(|w| w.workflow_id == r.workflow_id).unwrap();
        assert_eq!(r.attempts.is_empty(), r.outcome == Outcome::Rejected);
        assert_eq!(r.productivity_rate.is_some(), r.outcome == Outcome::Completed);
        if let Some(p) = r.productivity_rate {
            assert!((0.0..=100.0).contains(&p), "productivity {p}");
        }
        if r.outcome == Outcome::Completed {
            assert_eq!(r.attempts.last().unwrap().outcome, AttemptOutcome::Completed);
            let spans: Vec<(i64, i64)> = r.attempts.iter().map(|a| (a.start_ms, a.end_ms)).collect();
            let (rec, total) = recovery_accounting(&spans);
            assert!((rec - r.recovery_s).abs() < 1e-9 && (total - r.total_execution_s).abs() < 1e-9);
        }
        let mut prev_end = r.submit_ms;
        for a in &r.attempts {
            // causality: the node is online at start and the attempt follows the previous one
            let trace = &world.traces[a.node_id];
            let hour = trace.hour_index(a.start_ms.div_euclid(1000)).unwrap();
            assert_eq!(trace.hours[hour], 1, "workflow {} started on offline node {}", r.workflow_id, a.node_id);
            assert!(a.start_ms >= prev_end && a.end_ms >= a.start_ms);
            prev_end = a.end_ms;
            busy.entry(a.node_id).or_default().push((a.start_ms, a.end_ms));
            // confidential workflows run only on capable, attested nodes
            if w.cc_required {
                assert!(world.fleet[a.node_id].cc_capable);
                assert_eq!(a.attested, Some(a.outcome != AttemptOutcome::AttestationFailed));
            } else {
                assert_eq!(a.attested, None);
            }
        }
    }
    for spans in busy.values_mut() {
        spans.sort();
        assert!(spans.windows(2).all(|p| p[0].1 <= p[1].0), "node ran two workflows at once");
    }
    // every forecaster call is attributed to exactly one decision
    assert_eq!(calls, rep.records.iter().map(|r| r.predictions).sum::<usize>());
}

#[test]
fn invariants_hold_for_every_scheduler() {
    let world = common::default_world(11);
    for kind in SchedulerKind::ALL {
        let (rep, calls) = run(&world, kind, &SimConfig::default(), 11);
        check_invariants(&world, &rep, calls);
        assert!(rep.records.iter().any(|r| r.failures() > 0));
    }
}

#[test]
fn veca_failover_never_repredicts() {
    let world = common::default_world(12);
    let cfg = SimConfig { failure_probability: 1.0, ..SimConfig::default() };
    let (rep, _) = run(&world, SchedulerKind::Veca, &cfg, 12);
    let failed: Vec<_> = rep.records.iter().filter(|r| r.failures() > 0).collect();
    assert!(failed.len() > 20);
    for r in failed {
        assert_eq!(r.predictions, r.initial_candidates, "workflow {}", r.workflow_id);
        assert!(r.attempts.iter().skip(1).all(|a| a.decision.predictions == 0));
    }
}

#[test]
fn baselines_repredict_after_failure() {
    let world = common::default_world(13);
    let cfg = SimConfig { failure_probability: 1.0, ..SimConfig::default() };
    for kind in [SchedulerKind::Vela, SchedulerKind::VecFlex] {
        let (rep, _) = run(&world, kind, &cfg, 13);
        assert!(rep
            .records
            .iter()
            .filter(|r| r.attempts.len() > 1)
            .all(|r| r.attempts[1].decision.predictions > 0 && r.predictions > r.initial_candidates));
    }
}

#[test]
fn runs_are_deterministic_and_schedulers_share_arrivals() {
    let world = common::default_world(14);
    let (a, _) = run(&world, SchedulerKind::Vela, &SimConfig::default(), 14);
    let (b, _) = run(&world, SchedulerKind::Vela, &SimConfig::default(), 14);
    assert_eq!(a, b);
    let (c, _) = run(&world, SchedulerKind::Veca, &SimConfig::default(), 14);
    let submits = |r: &SimReport| r.records.iter().map(|x| (x.workflow_id, x.submit_ms)).collect::<Vec<_>>();
    assert_eq!(submits(&a), submits(&c));
}

#[test]
fn latency_is_the_accounted_search_cost() {
    let world = common::default_world(15);
    let sizes: Vec<usize> = world.clusters.members().iter().map(Vec::len).collect();
    for kind in SchedulerKind::ALL {
        let (rep, _) = run(&world, kind, &SimConfig::default(), 15);
        for r in rep.records.iter().filter(|r| !r.attempts.is_empty()) {
            let d = &r.attempts[0].decision;
            let expected = match kind {
                SchedulerKind::Veca => 5.0 + sizes[d.cluster_index.unwrap()] as f64,
                SchedulerKind::Vela => 5.0 + d.clusters_drawn.iter().map(|&c| sizes[c]).sum::<usize>() as f64,
                SchedulerKind::VecFlex => world.fleet.len() as f64,
            };
            assert!((r.search_latency_s * 1000.0 - expected).abs() < 1e-9, "{kind}: {} vs {expected}", r.search_latency_s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn invariants_hold_on_random_worlds(
        seed in any::<u64>(),
        nodes in 8usize..40,
        workflows in 1usize..40,
        p in 0.0f64..1.0,
        k in 0usize..3,
    ) {
        let world = small_world(seed, nodes, workflows);
        let cfg = SimConfig { failure_probability: p, ..SimConfig::default() };
        let (rep, calls) = run(&world, SchedulerKind::ALL[k], &cfg, seed);
        check_invariants(&world, &rep, calls);
    }
}
