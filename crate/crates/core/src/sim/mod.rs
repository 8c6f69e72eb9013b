//! Discrete-event simulation of node churn, arrivals, executions and
//! fail-over, producing per-workflow latency and productivity records.

mod report;

use std::collections::BTreeMap;

use rand::Rng;

pub use report::{
    compare_schedulers, quantile, render_summary, summarize_records, write_comparison, write_single_report, Comparison,
    ComparisonConfig, LatencyStats, ProductivityStats, ScaleRow, Subset, SummaryBlock,
};

use crate::clustering::CapacityClusters;
use crate::enclave::{build_enclave, launch_and_attest, provision_keys, terminate_enclave, Certifier, Enclave, NodeKey};
use crate::error::{Error, Result};
use crate::fleet::{AvailabilityTrace, VecNode, Workflow};
use crate::forecast::Forecaster;
use crate::rng::{stream_rng, FAILURES};
use crate::scheduler::{return_results, FleetState, Hub, LatencyCostModel, ScheduleDecision, SchedulerKind};
use crate::time::{Timestamp, HOUR};

pub type Millis = i64;

fn ms(seconds: f64) -> Millis {
    (seconds * 1000.0).round() as Millis
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub cost: LatencyCostModel,
    pub threshold: f64,
    /// Probability that a workflow's first attempt is hit by an injected node outage.
    pub failure_probability: f64,
    pub forced_outage_s: f64,
    pub detection_s: f64,
    pub cache_resume_s: f64,
    pub hub_round_trip_s: f64,
    pub restage_s: f64,
    pub redeploy_s: f64,
    pub requeue_backoff_s: f64,
    pub enclave_build_s: f64,
    pub attestation_s: f64,
    pub cache_max_entries: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cost: LatencyCostModel::default(),
            threshold: crate::scheduler::DEFAULT_THRESHOLD,
            failure_probability: 0.3,
            forced_outage_s: 1800.0,
            detection_s: 10.0,
            cache_resume_s: 2.0,
            hub_round_trip_s: 5.0,
            restage_s: 300.0,
            redeploy_s: 60.0,
            requeue_backoff_s: 60.0,
            enclave_build_s: 2.0,
            attestation_s: 0.5,
            cache_max_entries: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        if !(0.0..=1.0).contains(&self.failure_probability) {
            return Err(Error::Config("sim.failure_probability outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("sched.threshold outside [0, 1]".into()));
        }
        let delays = [
            self.forced_outage_s,
            self.detection_s,
            self.cache_resume_s,
            self.hub_round_trip_s,
            self.restage_s,
            self.redeploy_s,
            self.requeue_backoff_s,
            self.enclave_build_s,
            self.attestation_s,
        ];
        if delays.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Config("simulated delays must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Failure-to-restart gap when resuming from the cluster cache.
    pub fn cache_failover_gap_s(&self) -> f64 {
        self.detection_s + self.cache_resume_s + self.redeploy_s
    }

    /// Failure-to-restart gap when the hub re-schedules from scratch.
    pub fn resubmit_gap_s(&self) -> f64 {
        self.detection_s + self.hub_round_trip_s + self.restage_s + self.redeploy_s
    }
}

pub struct SimInputs<'a> {
    pub fleet: &'a [VecNode],
    pub traces: &'a [AvailabilityTrace],
    pub workloads: &'a [Workflow],
    pub clusters: &'a CapacityClusters,
    pub forecaster: &'a dyn Forecaster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    NodeDown,
    NodeUp,
    WorkflowArrival,
    ExecutionComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arrival {
    Submit,
    Requeue,
    Failover,
    Resubmit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Payload {
    /// `injected` names the attempt the outage targets and when it ends.
    NodeDown { node: usize, injected: Option<(usize, u32, Millis)> },
    NodeUp { node: usize, from_trace: bool },
    Arrival { index: usize, reason: Arrival },
    Complete { index: usize, attempt: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Completed,
    NodeFailure,
    AttestationFailed,
}

impl AttemptOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            AttemptOutcome::Completed => "completed",
            AttemptOutcome::NodeFailure => "node_failure",
            AttemptOutcome::AttestationFailed => "attestation_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub node_id: usize,
    pub start_ms: Millis,
    pub end_ms: Millis,
    pub outcome: AttemptOutcome,
    /// Attestation result for CC workflows, `None` otherwise.
    pub attested: Option<bool>,
    pub decision: ScheduleDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Failed,
    Rejected,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Failed => "failed",
            Outcome::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowRecord {
    pub workflow_id: u64,
    pub scheduler: SchedulerKind,
    pub cc_required: bool,
    pub submit_ms: Millis,
    pub outcome: Outcome,
    pub attempts: Vec<AttemptRecord>,
    pub total_execution_s: f64,
    pub recovery_s: f64,
    /// Only for completed workflows.
    pub productivity_rate: Option<f64>,
    /// Accounted latency of the initial node search.
    pub search_latency_s: f64,
    pub nodes_sampled: usize,
    /// Size of the candidate set of the initial placement.
    pub initial_candidates: usize,
    /// Forecast calls over the whole life of the workflow.
    pub predictions: usize,
}

impl WorkflowRecord {
    pub fn failures(&self) -> usize {
        self.attempts.iter().filter(|a| a.outcome != AttemptOutcome::Completed).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub records: Vec<WorkflowRecord>,
    pub deliveries: usize,
}

pub fn productivity_rate(recovery_s: f64, total_s: f64) -> Result<f64> {
    if !(total_s > 0.0) {
        return Err(Error::Data(format!("productivity undefined for total execution time {total_s}")));
    }
    if !(0.0..=total_s).contains(&recovery_s) {
        return Err(Error::Data(format!("recovery {recovery_s} outside [0, {total_s}]")));
    }
    Ok((1.0 - recovery_s / total_s) * 100.0)
}

/// `(recovery, total)` in seconds: the gaps between each failed attempt and
/// the next start, and the span from the first start to the final end.
pub fn recovery_accounting(attempts: &[(Millis, Millis)]) -> (f64, f64) {
    let (Some(first), Some(last)) = (attempts.first(), attempts.last()) else {
        return (0.0, 0.0);
    };
    let recovery: Millis = attempts.windows(2).map(|p| p[1].0 - p[0].1).sum();
    (recovery as f64 / 1000.0, (last.1 - first.0) as f64 / 1000.0)
}

struct Active {
    node: usize,
    attempt: u32,
    end_ms: Millis,
    enclave: Option<Enclave>,
}

#[derive(Default)]
struct Run {
    attempts: Vec<AttemptRecord>,
    active: Option<Active>,
    outcome: Option<Outcome>,
    requeued: bool,
    excluded: Vec<usize>,
    cluster: Option<usize>,
    initial: Option<ScheduleDecision>,
    predictions: usize,
    injected_failure: Option<f64>,
}

struct Kernel<'a> {
    inputs: &'a SimInputs<'a>,
    kind: SchedulerKind,
    config: &'a SimConfig,
    hub: Hub<'a>,
    certifier: Certifier,
    keys: BTreeMap<usize, NodeKey>,
    state: FleetState,
    trace_online: Vec<bool>,
    outage_until: Vec<Millis>,
    queue: BTreeMap<(Millis, EventKind, u64, u64), Payload>,
    seq: u64,
    runs: Vec<Run>,
    index: BTreeMap<u64, usize>,
    open: usize,
}

pub fn run_simulation(inputs: &SimInputs, kind: SchedulerKind, config: &SimConfig, seed: u64) -> Result<SimReport> {
    config.validate()?;
    let mut kernel = Kernel::new(inputs, kind, config, seed)?;
    kernel.run()?;
    Ok(kernel.into_report(seed))
}

impl<'a> Kernel<'a> {
    fn new(inputs: &'a SimInputs<'a>, kind: SchedulerKind, config: &'a SimConfig, seed: u64) -> Result<Self> {
        let n = inputs.fleet.len();
        if inputs.traces.len() != n {
            return Err(Error::Config(format!("{} traces for {n} nodes", inputs.traces.len())));
        }
        let mut hub = Hub::new(inputs.fleet, inputs.clusters, inputs.forecaster, config.cost, config.threshold, seed)?;
        for agent in &mut hub.agents {
            agent.cache.max_entries = config.cache_max_entries;
        }
        let keys = provision_keys(inputs.fleet, seed);
        let mut kernel = Kernel {
            inputs,
            kind,
            config,
            hub,
            certifier: Certifier::with_keys(seed, &keys),
            keys,
            state: FleetState::all_online(n),
            trace_online: vec![true; n],
            outage_until: vec![Millis::MIN; n],
            queue: BTreeMap::new(),
            seq: 0,
            runs: inputs.workloads.iter().map(|_| Run::default()).collect(),
            index: inputs.workloads.iter().enumerate().map(|(i, w)| (w.workflow_id, i)).collect(),
            open: inputs.workloads.len(),
        };
        let Some(first_submit) = inputs.workloads.iter().map(|w| w.submit_time).min() else {
            return Ok(kernel);
        };
        let Some(trace0) = inputs.traces.first() else {
            return Err(Error::Config("workflows submitted to an empty fleet".into()));
        };
        let (start, end) = (trace0.start_epoch, trace0.end_epoch());
        if let Some(w) = inputs.workloads.iter().find(|w| w.submit_time < start || w.submit_time >= end) {
            return Err(Error::Config(format!(
                "workflow {} submitted at {} outside the trace window [{start}, {end})",
                w.workflow_id, w.submit_time
            )));
        }
        let h0 = trace0.hour_index(first_submit)?;
        for (node, tr) in inputs.traces.iter().enumerate() {
            if tr.start_epoch != start || tr.hours.len() != trace0.hours.len() {
                return Err(Error::Config("traces must share start and horizon".into()));
            }
            kernel.trace_online[node] = tr.hours[h0] == 1;
            kernel.state.online[node] = kernel.trace_online[node];
            for h in h0 + 1..tr.hours.len() {
                if tr.hours[h] != tr.hours[h - 1] {
                    let t = (start + h as Timestamp * HOUR) * 1000;
                    let payload = if tr.hours[h] == 1 {
                        Payload::NodeUp { node, from_trace: true }
                    } else {
                        Payload::NodeDown { node, injected: None }
                    };
                    kernel.push(t, payload);
                }
            }
        }
        for (index, w) in inputs.workloads.iter().enumerate() {
            let mut rng = stream_rng(seed, &[FAILURES, w.workflow_id]);
            let hit = rng.random::<f64>() < config.failure_probability;
            let at = rng.random_range(0.1..0.9);
            kernel.runs[index].injected_failure = hit.then_some(at);
            kernel.push(w.submit_time * 1000, Payload::Arrival { index, reason: Arrival::Submit });
        }
        Ok(kernel)
    }

    fn push(&mut self, t: Millis, payload: Payload) {
        let (kind, id) = match payload {
            Payload::NodeDown { node, .. } => (EventKind::NodeDown, node as u64),
            Payload::NodeUp { node, .. } => (EventKind::NodeUp, node as u64),
            Payload::Arrival { index, .. } => (EventKind::WorkflowArrival, self.inputs.workloads[index].workflow_id),
            Payload::Complete { index, .. } => (EventKind::ExecutionComplete, self.inputs.workloads[index].workflow_id),
        };
        self.seq += 1;
        self.queue.insert((t, kind, id, self.seq), payload);
    }

    fn run(&mut self) -> Result<()> {
        while self.open > 0 {
            let Some(((now, ..), payload)) = self.queue.pop_first() else {
                return Err(Error::Data(format!("event queue drained with {} workflows unresolved", self.open)));
            };
            match payload {
                Payload::NodeDown { node, injected } => self.on_node_down(now, node, injected),
                Payload::NodeUp { node, from_trace } => {
                    if from_trace {
                        self.trace_online[node] = true;
                    }
                    self.refresh(node, now);
                }
                Payload::Arrival { index, reason } => self.on_arrival(now, index, reason)?,
                Payload::Complete { index, attempt } => self.on_complete(now, index, attempt),
            }
        }
        Ok(())
    }

    fn refresh(&mut self, node: usize, now: Millis) {
        self.state.online[node] = self.trace_online[node] && now >= self.outage_until[node];
    }

    fn on_node_down(&mut self, now: Millis, node: usize, injected: Option<(usize, u32, Millis)>) {
        match injected {
            Some((index, attempt, until)) => {
                let targeted = self.runs[index].active.as_ref().is_some_and(|a| a.attempt == attempt && a.node == node);
                if !targeted {
                    return;
                }
                self.outage_until[node] = self.outage_until[node].max(until);
                self.push(until, Payload::NodeUp { node, from_trace: false });
            }
            None => self.trace_online[node] = false,
        }
        self.refresh(node, now);
        if self.state.online[node] {
            return;
        }
        let Some(wid) = self.state.running[node] else { return };
        let index = self.index_of(wid);
        if self.runs[index].active.as_ref().is_some_and(|a| now < a.end_ms) {
            self.fail_attempt(now, index, AttemptOutcome::NodeFailure);
        }
    }

    fn index_of(&self, workflow_id: u64) -> usize {
        self.index[&workflow_id]
    }

    fn fail_attempt(&mut self, now: Millis, index: usize, outcome: AttemptOutcome) {
        let active = self.runs[index].active.take().expect("attempt is active");
        if let Some(mut enclave) = active.enclave {
            terminate_enclave(&mut enclave);
        }
        self.state.running[active.node] = None;
        let run = &mut self.runs[index];
        let rec = run.attempts.last_mut().expect("attempt recorded");
        rec.end_ms = now;
        rec.outcome = outcome;
        let (reason, gap) = match self.kind {
            SchedulerKind::Veca => (Arrival::Failover, self.config.cache_failover_gap_s()),
            _ => {
                run.excluded.push(active.node);
                (Arrival::Resubmit, self.config.resubmit_gap_s())
            }
        };
        self.push(now + ms(gap), Payload::Arrival { index, reason });
    }

    fn on_arrival(&mut self, now: Millis, index: usize, reason: Arrival) -> Result<()> {
        let inputs = self.inputs;
        let w = &inputs.workloads[index];
        let attempt = self.runs[index].attempts.len() as u32 + 1;
        let now_s = now.div_euclid(1000);
        if reason == Arrival::Failover {
            let cluster = self.runs[index].cluster.expect("veca placement has a cluster");
            let failed = self.runs[index].attempts.last().expect("failover follows an attempt").node_id;
            match self.hub.failover(cluster, w.workflow_id, failed, &self.state, attempt) {
                Some(d) => self.start_attempt(now, index, d),
                None => self.finish(index, Outcome::Failed),
            }
            return Ok(());
        }
        let exclude = self.runs[index].excluded.clone();
        match self.hub.schedule(self.kind, w, &self.state, now_s, attempt, &exclude) {
            Ok(d) => {
                let run = &mut self.runs[index];
                run.predictions += d.predictions;
                if run.initial.is_none() {
                    run.initial = Some(d.clone());
                    run.cluster = d.cluster_index;
                }
                self.start_attempt(now, index, d);
            }
            Err(Error::NoEligibleNode { .. }) => {
                let run = &mut self.runs[index];
                if !run.requeued {
                    run.requeued = true;
                    let again = if reason == Arrival::Resubmit { Arrival::Resubmit } else { Arrival::Requeue };
                    self.push(now + ms(self.config.requeue_backoff_s), Payload::Arrival { index, reason: again });
                } else if run.attempts.is_empty() {
                    self.finish(index, Outcome::Rejected);
                } else {
                    self.finish(index, Outcome::Failed);
                }
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn start_attempt(&mut self, now: Millis, index: usize, decision: ScheduleDecision) {
        let inputs = self.inputs;
        let w = &inputs.workloads[index];
        let node = decision.node_id;
        debug_assert!(self.state.is_free(node));
        let attempt = decision.attempt_number;
        let mut exec_ms = w.duration_s as Millis * 1000;
        let mut enclave = None;
        let mut attested = None;
        if w.cc_required {
            exec_ms += ms(self.config.enclave_build_s + self.config.attestation_s);
            let launched = build_enclave(w).and_then(|image| {
                launch_and_attest(&image, &inputs.fleet[node], self.keys.get(&node), &mut self.certifier)
            });
            attested = Some(launched.is_ok());
            enclave = launched.ok().map(|(e, _)| e);
        }
        self.runs[index].attempts.push(AttemptRecord {
            node_id: node,
            start_ms: now,
            end_ms: now,
            outcome: AttemptOutcome::Completed,
            attested,
            decision,
        });
        self.state.running[node] = Some(w.workflow_id);
        let end_ms = now + exec_ms;
        self.runs[index].active = Some(Active { node, attempt, end_ms, enclave });
        if attested == Some(false) {
            self.fail_attempt(now, index, AttemptOutcome::AttestationFailed);
            return;
        }
        self.push(end_ms, Payload::Complete { index, attempt });
        if attempt == 1 {
            if let Some(at) = self.runs[index].injected_failure {
                let t = now + (exec_ms as f64 * at).round() as Millis;
                let until = t + ms(self.config.forced_outage_s);
                self.push(t, Payload::NodeDown { node, injected: Some((index, attempt, until)) });
            }
        }
    }

    fn on_complete(&mut self, now: Millis, index: usize, attempt: u32) {
        let current = self.runs[index].active.as_ref().is_some_and(|a| a.attempt == attempt);
        if !current {
            return;
        }
        let active = self.runs[index].active.take().expect("checked");
        if let Some(mut enclave) = active.enclave {
            terminate_enclave(&mut enclave);
        }
        self.state.running[active.node] = None;
        self.runs[index].attempts.last_mut().expect("attempt recorded").end_ms = now;
        return_results(&mut self.hub.results, self.inputs.workloads[index].workflow_id, active.node, now);
        self.finish(index, Outcome::Completed);
    }

    fn finish(&mut self, index: usize, outcome: Outcome) {
        if let Some(c) = self.runs[index].cluster.filter(|_| self.kind == SchedulerKind::Veca) {
            self.hub.release(c, self.inputs.workloads[index].workflow_id);
        }
        self.runs[index].outcome = Some(outcome);
        self.open -= 1;
    }

    fn into_report(self, seed: u64) -> SimReport {
        let deliveries = self.hub.results.rows().len();
        let records = self
            .runs
            .into_iter()
            .zip(self.inputs.workloads)
            .map(|(run, w)| {
                let outcome = run.outcome.expect("every workflow resolved");
                let spans: Vec<(Millis, Millis)> = run.attempts.iter().map(|a| (a.start_ms, a.end_ms)).collect();
                let (recovery_s, total_execution_s) = match outcome {
                    Outcome::Completed => recovery_accounting(&spans),
                    _ => (0.0, 0.0),
                };
                let productivity = match outcome {
                    Outcome::Completed => productivity_rate(recovery_s, total_execution_s).ok(),
                    _ => None,
                };
                let initial = run.initial.as_ref();
                WorkflowRecord {
                    workflow_id: w.workflow_id,
                    scheduler: self.kind,
                    cc_required: w.cc_required,
                    submit_ms: w.submit_time * 1000,
                    outcome,
                    attempts: run.attempts,
                    total_execution_s,
                    recovery_s,
                    productivity_rate: productivity,
                    search_latency_s: initial.map_or(0.0, |d| d.search_latency_s),
                    nodes_sampled: initial.map_or(0, |d| d.nodes_sampled),
                    initial_candidates: initial.map_or(0, |d| d.candidates),
                    predictions: run.predictions,
                }
            })
            .collect();
        SimReport { scheduler: self.kind, seed, records, deliveries }
    }
}
