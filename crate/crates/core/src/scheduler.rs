//! Two-phase scheduling (capacity cluster, then availability-ranked and
//! geo-nearest node), the per-cluster candidate cache used for fail-over, and
//! the two baseline schedulers.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::clustering::CapacityClusters;
use crate::error::{Error, Result};
use crate::fleet::{GeoPoint, VecNode, Workflow};
use crate::forecast::Forecaster;
use crate::rng::{stream_rng, VELA};
use crate::time::Timestamp;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Great-circle distance in km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulerKind {
    Veca,
    Vela,
    VecFlex,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [SchedulerKind::Veca, SchedulerKind::Vela, SchedulerKind::VecFlex];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Veca => "veca",
            SchedulerKind::Vela => "vela",
            SchedulerKind::VecFlex => "vecflex",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheduler `{s}` (expected veca, vela or vecflex)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyCostModel {
    pub cluster_select_cost_s: f64,
    pub per_node_sample_cost_s: f64,
    pub vela_clusters_sampled: usize,
}

impl Default for LatencyCostModel {
    fn default() -> Self {
        LatencyCostModel { cluster_select_cost_s: 0.005, per_node_sample_cost_s: 0.001, vela_clusters_sampled: 2 }
    }
}

impl LatencyCostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.cluster_select_cost_s >= 0.0 && self.per_node_sample_cost_s > 0.0) {
            return Err(Error::Config("latency costs must be nonnegative (per-node cost positive)".into()));
        }
        if self.vela_clusters_sampled == 0 {
            return Err(Error::Config("cost.vela_clusters_sampled must be at least 1".into()));
        }
        Ok(())
    }
}

/// Liveness of every node at the current instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub online: Vec<bool>,
    pub running: Vec<Option<u64>>,
}

impl FleetState {
    pub fn all_online(n: usize) -> Self {
        FleetState { online: vec![true; n], running: vec![None; n] }
    }

    pub fn is_free(&self, node_id: usize) -> bool {
        self.online[node_id] && self.running[node_id].is_none()
    }

    pub fn online_count(&self) -> usize {
        self.online.iter().filter(|&&o| o).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedCandidates {
    pub workflow_id: u64,
    /// `(node_id, predicted_availability)`, by availability descending then id.
    pub entries: Vec<(usize, f64)>,
    pub created_at: Timestamp,
}

impl OrderedCandidates {
    pub fn new(workflow_id: u64, mut entries: Vec<(usize, f64)>, created_at: Timestamp) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        OrderedCandidates { workflow_id, entries, created_at }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn remove_node(&mut self, node_id: usize) {
        self.entries.retain(|&(n, _)| n != node_id);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CacheEntry {
    workflow: Workflow,
    candidates: OrderedCandidates,
    last_used: u64,
}

/// Cluster-local store of `workflow_id -> (workflow, candidates)`, with
/// optional least-recently-used eviction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterCache {
    pub max_entries: Option<usize>,
    entries: BTreeMap<u64, CacheEntry>,
    clock: u64,
}

impl ClusterCache {
    pub fn new(max_entries: Option<usize>) -> Self {
        ClusterCache { max_entries, ..Default::default() }
    }

    pub fn store(&mut self, workflow: &Workflow, candidates: &OrderedCandidates) {
        self.clock += 1;
        if let Some(max) = self.max_entries {
            while self.entries.len() >= max.max(1) && !self.entries.contains_key(&workflow.workflow_id) {
                let oldest = self.entries.iter().min_by_key(|(_, e)| e.last_used).map(|(&id, _)| id);
                match oldest {
                    Some(id) => self.entries.remove(&id),
                    None => break,
                };
            }
        }
        self.entries.insert(
            workflow.workflow_id,
            CacheEntry { workflow: workflow.clone(), candidates: candidates.clone(), last_used: self.clock },
        );
    }

    pub fn lookup(&mut self, workflow_id: u64) -> Option<(&Workflow, &OrderedCandidates)> {
        self.clock += 1;
        let clock = self.clock;
        self.entries.get_mut(&workflow_id).map(|e| {
            e.last_used = clock;
            (&e.workflow, &e.candidates)
        })
    }

    pub fn drop_candidate(&mut self, workflow_id: u64, node_id: usize) {
        if let Some(e) = self.entries.get_mut(&workflow_id) {
            e.candidates.remove_node(node_id);
        }
    }

    pub fn remove(&mut self, workflow_id: u64) -> bool {
        self.entries.remove(&workflow_id).is_some()
    }

    pub fn contains(&self, workflow_id: u64) -> bool {
        self.entries.contains_key(&workflow_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn select_cluster(clusters: &CapacityClusters, w: &Workflow) -> usize {
    clusters.select(&w.required)
}

/// Scores the free, CC-compatible nodes of `scope` at `now`.
pub fn score_candidates(
    scope: &[usize],
    w: &Workflow,
    fleet: &[VecNode],
    state: &FleetState,
    forecaster: &dyn Forecaster,
    now: Timestamp,
) -> Result<OrderedCandidates> {
    let mut entries = Vec::new();
    for &n in scope {
        if state.is_free(n) && (!w.cc_required || fleet[n].cc_capable) {
            entries.push((n, forecaster.availability(n, now, w.duration_s)?));
        }
    }
    if entries.is_empty() {
        return Err(Error::NoEligibleNode { workflow_id: w.workflow_id });
    }
    Ok(OrderedCandidates::new(w.workflow_id, entries, now))
}

/// `score_candidates` followed by storing the ordering in the cluster cache.
pub fn predict_node_availability(
    cluster_nodes: &[usize],
    w: &Workflow,
    fleet: &[VecNode],
    state: &FleetState,
    forecaster: &dyn Forecaster,
    now: Timestamp,
    cache: &mut ClusterCache,
) -> Result<OrderedCandidates> {
    let c = score_candidates(cluster_nodes, w, fleet, state, forecaster, now)?;
    cache.store(w, &c);
    Ok(c)
}

/// Nearest node among those at or above `threshold`; the top-ranked entry
/// when none qualifies.
pub fn select_nearest_node(
    candidates: &OrderedCandidates,
    user_location: GeoPoint,
    fleet: &[VecNode],
    threshold: f64,
) -> Result<usize> {
    let top = candidates
        .entries
        .first()
        .ok_or(Error::NoEligibleNode { workflow_id: candidates.workflow_id })?;
    let nearest = candidates
        .entries
        .iter()
        .filter(|e| e.1 >= threshold)
        .map(|&(n, _)| (haversine_km(user_location, fleet[n].location), n))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(nearest.map_or(top.0, |(_, n)| n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub workflow_id: u64,
    pub scheduler: SchedulerKind,
    /// The capacity-matched cluster (VECA only).
    pub cluster_index: Option<usize>,
    /// Clusters drawn by VELA.
    pub clusters_drawn: Vec<usize>,
    pub attempt_number: u32,
    pub node_id: usize,
    pub nodes_sampled: usize,
    pub search_latency_s: f64,
    /// Size of the candidate set the node was chosen from.
    pub candidates: usize,
    /// Forecast calls made for this decision.
    pub predictions: usize,
    pub predicted_availability: f64,
}

/// One scheduling agent per cluster, holding its queue and cache.
#[derive(Debug, Clone)]
pub struct ClusterAgent {
    pub index: usize,
    pub members: Vec<usize>,
    pub queue: VecDeque<Workflow>,
    pub cache: ClusterCache,
}

/// Delivered result of a completed workflow.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryRecord {
    pub workflow_id: u64,
    pub node_id: usize,
    pub completed_at_ms: i64,
    pub delivered: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultStore {
    rows: Vec<DeliveryRecord>,
}

impl ResultStore {
    pub fn rows(&self) -> &[DeliveryRecord] {
        &self.rows
    }
}

pub fn return_results(store: &mut ResultStore, workflow_id: u64, node_id: usize, completed_at_ms: i64) -> &DeliveryRecord {
    store.rows.push(DeliveryRecord { workflow_id, node_id, completed_at_ms, delivered: true });
    store.rows.last().expect("just pushed")
}

/// Hub-side scheduling state shared by the three strategies.
pub struct Hub<'a> {
    pub fleet: &'a [VecNode],
    pub clusters: &'a CapacityClusters,
    pub forecaster: &'a dyn Forecaster,
    pub cost: LatencyCostModel,
    pub threshold: f64,
    pub seed: u64,
    pub agents: Vec<ClusterAgent>,
    pub results: ResultStore,
}

struct Counted<'a> {
    inner: &'a dyn Forecaster,
    calls: std::cell::Cell<usize>,
}

impl Forecaster for Counted<'_> {
    fn availability(&self, node_id: usize, t: Timestamp, duration_s: u32) -> Result<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.availability(node_id, t, duration_s)
    }
}

impl<'a> Hub<'a> {
    pub fn new(
        fleet: &'a [VecNode],
        clusters: &'a CapacityClusters,
        forecaster: &'a dyn Forecaster,
        cost: LatencyCostModel,
        threshold: f64,
        seed: u64,
    ) -> Result<Self> {
        cost.validate()?;
        if clusters.model.assignments.len() != fleet.len() {
            return Err(Error::Config(format!(
                "clustering covers {} nodes but the fleet has {}",
                clusters.model.assignments.len(),
                fleet.len()
            )));
        }
        let agents = clusters
            .members()
            .into_iter()
            .enumerate()
            .map(|(index, members)| ClusterAgent { index, members, queue: VecDeque::new(), cache: ClusterCache::new(None) })
            .collect();
        Ok(Hub { fleet, clusters, forecaster, cost, threshold, seed, agents, results: ResultStore::default() })
    }

    fn decide(
        &self,
        kind: SchedulerKind,
        scope: &[usize],
        w: &Workflow,
        state: &FleetState,
        now: Timestamp,
        attempt: u32,
    ) -> Result<(ScheduleDecision, OrderedCandidates)> {
        let counted = Counted { inner: self.forecaster, calls: Default::default() };
        let candidates = score_candidates(scope, w, self.fleet, state, &counted, now)?;
        let node_id = select_nearest_node(&candidates, w.user_location, self.fleet, self.threshold)?;
        let predicted = candidates.entries.iter().find(|e| e.0 == node_id).map_or(0.0, |e| e.1);
        let decision = ScheduleDecision {
            workflow_id: w.workflow_id,
            scheduler: kind,
            cluster_index: None,
            clusters_drawn: Vec::new(),
            attempt_number: attempt,
            node_id,
            nodes_sampled: scope.len(),
            search_latency_s: self.cost.per_node_sample_cost_s * scope.len() as f64,
            candidates: candidates.len(),
            predictions: counted.calls.get(),
            predicted_availability: predicted,
        };
        Ok((decision, candidates))
    }

    /// Capacity-matched cluster, then ranking within it. The ordering is
    /// cached in the cluster's agent for fail-over.
    pub fn schedule_veca(&mut self, w: &Workflow, state: &FleetState, now: Timestamp, attempt: u32) -> Result<ScheduleDecision> {
        let c = select_cluster(self.clusters, w);
        self.agents[c].queue.push_back(w.clone());
        let w = self.agents[c].queue.pop_front().expect("just enqueued");
        let (mut d, candidates) = self.decide(SchedulerKind::Veca, &self.agents[c].members, &w, state, now, attempt)?;
        self.agents[c].cache.store(&w, &candidates);
        d.cluster_index = Some(c);
        d.search_latency_s += self.cost.cluster_select_cost_s;
        Ok(d)
    }

    /// Ranks nodes of `c` clusters drawn at random per (seed, workflow, attempt).
    pub fn schedule_vela(&mut self, w: &Workflow, state: &FleetState, now: Timestamp, attempt: u32, exclude: &[usize]) -> Result<ScheduleDecision> {
        let k = self.agents.len();
        let c = self.cost.vela_clusters_sampled.min(k);
        let mut rng = stream_rng(self.seed, &[VELA, w.workflow_id, attempt as u64]);
        let mut drawn: Vec<usize> = sample(&mut rng, k, c).into_vec();
        drawn.sort_unstable();
        let scope: Vec<usize> = drawn
            .iter()
            .flat_map(|&i| self.agents[i].members.iter().copied())
            .filter(|n| !exclude.contains(n))
            .collect();
        let (mut d, _) = self.decide(SchedulerKind::Vela, &scope, w, state, now, attempt)?;
        d.clusters_drawn = drawn;
        d.search_latency_s += self.cost.cluster_select_cost_s;
        Ok(d)
    }

    /// Ranks every node in the fleet.
    pub fn schedule_vecflex(&mut self, w: &Workflow, state: &FleetState, now: Timestamp, attempt: u32, exclude: &[usize]) -> Result<ScheduleDecision> {
        let scope: Vec<usize> = (0..self.fleet.len()).filter(|n| !exclude.contains(n)).collect();
        self.decide(SchedulerKind::VecFlex, &scope, w, state, now, attempt).map(|(d, _)| d)
    }

    pub fn schedule(
        &mut self,
        kind: SchedulerKind,
        w: &Workflow,
        state: &FleetState,
        now: Timestamp,
        attempt: u32,
        exclude: &[usize],
    ) -> Result<ScheduleDecision> {
        match kind {
            SchedulerKind::Veca => self.schedule_veca(w, state, now, attempt),
            SchedulerKind::Vela => self.schedule_vela(w, state, now, attempt, exclude),
            SchedulerKind::VecFlex => self.schedule_vecflex(w, state, now, attempt, exclude),
        }
    }

    /// Fail-over from the cached ordering: drop the failed node, skip cached
    /// nodes that are now offline or busy, and re-select without predicting.
    /// `None` when the cached candidates are exhausted.
    pub fn failover(
        &mut self,
        cluster: usize,
        workflow_id: u64,
        failed_node: usize,
        state: &FleetState,
        attempt: u32,
    ) -> Option<ScheduleDecision> {
        let agent = &mut self.agents[cluster];
        agent.cache.drop_candidate(workflow_id, failed_node);
        let (w, cached) = agent.cache.lookup(workflow_id)?;
        let live: Vec<(usize, f64)> = cached.entries.iter().copied().filter(|&(n, _)| state.is_free(n)).collect();
        let examined = cached.len();
        let live = OrderedCandidates { workflow_id, entries: live, created_at: cached.created_at };
        let node_id = select_nearest_node(&live, w.user_location, self.fleet, self.threshold).ok()?;
        let predicted = live.entries.iter().find(|e| e.0 == node_id).map_or(0.0, |e| e.1);
        Some(ScheduleDecision {
            workflow_id,
            scheduler: SchedulerKind::Veca,
            cluster_index: Some(cluster),
            clusters_drawn: Vec::new(),
            attempt_number: attempt,
            node_id,
            nodes_sampled: examined,
            search_latency_s: self.cost.per_node_sample_cost_s * examined as f64,
            candidates: live.len(),
            predictions: 0,
            predicted_availability: predicted,
        })
    }

    /// Drops the cache entry once the workflow reaches a terminal outcome.
    pub fn release(&mut self, cluster: usize, workflow_id: u64) {
        self.agents[cluster].cache.remove(workflow_id);
    }

    pub fn cached_candidates(&mut self, cluster: usize, workflow_id: u64) -> Option<OrderedCandidates> {
        self.agents[cluster].cache.lookup(workflow_id).map(|(_, c)| c.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{generate_fleet, generate_workloads, FleetConfig, WorkloadConfig};
    use crate::forecast::CountingForecaster;
    use proptest::prelude::*;

    struct Table(Vec<f64>);
    impl Forecaster for Table {
        fn availability(&self, n: usize, _: Timestamp, _: u32) -> Result<f64> {
            Ok(self.0[n])
        }
    }

    fn setup() -> (Vec<VecNode>, CapacityClusters, Vec<Workflow>) {
        let fleet = generate_fleet(&FleetConfig::default(), 7).unwrap();
        let (clusters, _) = CapacityClusters::fit(&fleet, 1..=8, 7).unwrap();
        let wl = generate_workloads(&WorkloadConfig { count: 20, ..WorkloadConfig::default() }, 7).unwrap();
        (fleet, clusters, wl)
    }

    #[test]
    fn haversine_reference_distances() {
        let p = |lat, lon| GeoPoint::new(lat, lon).unwrap();
        assert_eq!(haversine_km(p(10.0, 20.0), p(10.0, 20.0)), 0.0);
        let quarter = haversine_km(p(0.0, 0.0), p(0.0, 90.0));
        assert!((quarter - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        let antipode = haversine_km(p(0.0, 0.0), p(0.0, 180.0));
        assert!((antipode - EARTH_RADIUS_KM * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn threshold_and_fallback_rules() {
        let (fleet, _, _) = setup();
        let user = fleet[0].location;
        let below = OrderedCandidates::new(1, vec![(3, 0.5), (4, 0.7)], 0);
        assert_eq!(select_nearest_node(&below, user, &fleet, 0.8).unwrap(), 4);
        let one = OrderedCandidates::new(1, vec![(3, 0.5), (9, 0.81)], 0);
        assert_eq!(select_nearest_node(&one, user, &fleet, 0.8).unwrap(), 9);
        let nearest = OrderedCandidates::new(1, vec![(0, 0.85), (9, 0.99)], 0);
        assert_eq!(select_nearest_node(&nearest, user, &fleet, 0.8).unwrap(), 0);
        assert!(select_nearest_node(&OrderedCandidates::new(1, vec![], 0), user, &fleet, 0.8).is_err());
    }

    #[test]
    fn candidate_ties_order_by_node_id() {
        let c = OrderedCandidates::new(1, vec![(7, 0.9), (2, 0.9), (5, 0.95)], 0);
        assert_eq!(c.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![5, 2, 7]);
    }

    #[test]
    fn cc_filter_restricts_candidates() {
        let (fleet, _, wl) = setup();
        let mut w = wl[0].clone();
        w.cc_required = true;
        let scope: Vec<usize> = (0..10).collect();
        let state = FleetState::all_online(fleet.len());
        let f = Table(vec![0.5; fleet.len()]);
        let c = score_candidates(&scope, &w, &fleet, &state, &f, 0);
        let cc: Vec<usize> = scope.iter().copied().filter(|&n| fleet[n].cc_capable).collect();
        match c {
            Ok(c) => assert_eq!(c.entries.iter().map(|e| e.0).collect::<Vec<_>>(), cc),
            Err(_) => assert!(cc.is_empty()),
        }
    }

    #[test]
    fn cache_write_lookup_and_lru() {
        let (_, _, wl) = setup();
        let mut cache = ClusterCache::new(Some(2));
        let c0 = OrderedCandidates::new(wl[0].workflow_id, vec![(1, 0.9)], 0);
        cache.store(&wl[0], &c0);
        cache.store(&wl[1], &OrderedCandidates::new(wl[1].workflow_id, vec![], 0));
        assert_eq!(cache.lookup(wl[0].workflow_id).unwrap().1, &c0);
        cache.store(&wl[2], &OrderedCandidates::new(wl[2].workflow_id, vec![], 0));
        assert!(cache.contains(wl[0].workflow_id));
        assert!(!cache.contains(wl[1].workflow_id));
        assert!(cache.remove(wl[0].workflow_id));
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn veca_latency_arithmetic_and_cache_population() {
        let (fleet, clusters, wl) = setup();
        let f = CountingForecaster::new(Table(vec![0.9; fleet.len()]));
        let mut hub = Hub::new(&fleet, &clusters, &f, LatencyCostModel::default(), 0.8, 7).unwrap();
        let state = FleetState::all_online(fleet.len());
        let mut w = wl[0].clone();
        w.cc_required = false;
        let d = hub.schedule_veca(&w, &state, 0, 1).unwrap();
        let c = d.cluster_index.unwrap();
        let size = hub.agents[c].members.len();
        assert_eq!(d.nodes_sampled, size);
        assert!((d.search_latency_s - (0.005 + 0.001 * size as f64)).abs() < 1e-12);
        assert_eq!(d.predictions, size);
        assert_eq!(f.calls(), size);
        assert_eq!(hub.cached_candidates(c, w.workflow_id).unwrap().len(), size);

        let flex = hub.schedule_vecflex(&w, &state, 0, 1, &[]).unwrap();
        assert_eq!(flex.nodes_sampled, 50);
        assert!((flex.search_latency_s - 0.050).abs() < 1e-12);
    }

    #[test]
    fn vela_with_all_clusters_matches_vecflex_candidates() {
        let (fleet, clusters, wl) = setup();
        let f = Table((0..fleet.len()).map(|n| 0.5 + n as f64 / 200.0).collect());
        let cost = LatencyCostModel { vela_clusters_sampled: clusters.k(), ..Default::default() };
        let mut hub = Hub::new(&fleet, &clusters, &f, cost, 0.8, 7).unwrap();
        let state = FleetState::all_online(fleet.len());
        for w in &wl {
            let a = hub.schedule_vela(w, &state, 0, 1, &[]).unwrap();
            let b = hub.schedule_vecflex(w, &state, 0, 1, &[]).unwrap();
            assert_eq!(a.node_id, b.node_id);
            assert_eq!(a.nodes_sampled, b.nodes_sampled);
            assert!((a.search_latency_s - b.search_latency_s - 0.005).abs() < 1e-12);
            assert_eq!(a.clusters_drawn, (0..clusters.k()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn failover_uses_cache_without_predicting() {
        let (fleet, clusters, wl) = setup();
        let f = CountingForecaster::new(Table(vec![0.9; fleet.len()]));
        let mut hub = Hub::new(&fleet, &clusters, &f, LatencyCostModel::default(), 0.8, 7).unwrap();
        let mut state = FleetState::all_online(fleet.len());
        let w = &wl[3];
        let d = hub.schedule_veca(w, &state, 0, 1).unwrap();
        let c = d.cluster_index.unwrap();
        let calls = f.calls();
        state.online[d.node_id] = false;
        let before = hub.cached_candidates(c, w.workflow_id).unwrap();
        let next = hub.failover(c, w.workflow_id, d.node_id, &state, 2);
        assert_eq!(f.calls(), calls);
        let mut expected = before.clone();
        expected.remove_node(d.node_id);
        match next {
            Some(n) => {
                assert_ne!(n.node_id, d.node_id);
                assert_eq!(n.node_id, select_nearest_node(&expected, w.user_location, &fleet, 0.8).unwrap());
            }
            None => assert!(expected.is_empty()),
        }
        hub.release(c, w.workflow_id);
        assert!(hub.cached_candidates(c, w.workflow_id).is_none());
    }

    #[test]
    fn results_are_append_only() {
        let mut store = ResultStore::default();
        for i in 0..50 {
            return_results(&mut store, i, 0, 0);
        }
        let mut ids: Vec<u64> = store.rows().iter().map(|r| r.workflow_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn unknown_scheduler_name() {
        assert!("random".parse::<SchedulerKind>().is_err());
        assert_eq!("vecflex".parse::<SchedulerKind>().unwrap(), SchedulerKind::VecFlex);
    }

    proptest! {
        #[test]
        fn candidate_ordering_is_a_sorted_permutation(scores in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let entries: Vec<(usize, f64)> = scores.iter().enumerate().map(|(i, &s)| (i, (s * 10.0).round() / 10.0)).collect();
            let c = OrderedCandidates::new(0, entries.clone(), 0);
            let mut ids: Vec<usize> = c.entries.iter().map(|e| e.0).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..scores.len()).collect::<Vec<_>>());
            for pair in c.entries.windows(2) {
                prop_assert!(pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0));
            }
        }
    }
}
