use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AvailabilityTrace, CapacityVector, FleetConfig, GeoPoint, VecNode, Workflow};
use crate::artifact::{read_csv, write_csv, ArtifactHeader};
use crate::error::{Error, Result};
use crate::time::Timestamp;

#[derive(Serialize, Deserialize)]
struct FleetRow {
    node_id: usize,
    cpu: u32,
    ram_gb: f64,
    storage_gb: f64,
    lat: f64,
    lon: f64,
    cc_capable: bool,
    profile: String,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    node_id: usize,
    hour_index: usize,
    state: u8,
}

#[derive(Serialize, Deserialize)]
struct WorkloadRow {
    workflow_id: u64,
    cpu: u32,
    ram_gb: f64,
    storage_gb: f64,
    duration_s: u32,
    cc_required: bool,
    lat: f64,
    lon: f64,
    submit_epoch: i64,
}

pub fn write_fleet_csv(path: &Path, header: &ArtifactHeader, fleet: &[VecNode], force: bool) -> Result<()> {
    let rows = fleet.iter().map(|n| FleetRow {
        node_id: n.node_id,
        cpu: n.capacity.cpu_count,
        ram_gb: n.capacity.ram_gb,
        storage_gb: n.capacity.storage_gb,
        lat: n.location.lat,
        lon: n.location.lon,
        cc_capable: n.cc_capable,
        profile: n.profile.kind.to_string(),
    });
    write_csv(path, header, rows, force)
}

/// Profile probabilities are not stored in the CSV; they come from `config`.
pub fn read_fleet_csv(path: &Path, config: &FleetConfig) -> Result<Vec<VecNode>> {
    let rows: Vec<FleetRow> = read_csv(path)?;
    let bad = |msg: String| Error::parse(path, msg);
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.node_id != i {
                return Err(bad(format!("node ids must be dense from 0, found {} at row {i}", r.node_id)));
            }
            let kind = r.profile.parse().map_err(|e: Error| bad(e.to_string()))?;
            let profile = config
                .profile_for(kind)
                .ok_or_else(|| bad(format!("profile `{kind}` not present in config")))?;
            Ok(VecNode {
                node_id: r.node_id,
                capacity: CapacityVector::new(r.cpu, r.ram_gb, r.storage_gb).map_err(|e| bad(e.to_string()))?,
                location: GeoPoint::new(r.lat, r.lon).map_err(|e| bad(e.to_string()))?,
                cc_capable: r.cc_capable,
                profile,
            })
        })
        .collect()
}

pub fn write_traces_csv(path: &Path, header: &ArtifactHeader, traces: &[AvailabilityTrace], force: bool) -> Result<()> {
    let rows = traces.iter().flat_map(|tr| {
        tr.hours
            .iter()
            .enumerate()
            .map(move |(hour_index, &state)| TraceRow { node_id: tr.node_id, hour_index, state })
    });
    write_csv(path, header, rows, force)
}

pub fn read_traces_csv(path: &Path, start_epoch: Timestamp) -> Result<Vec<AvailabilityTrace>> {
    let rows: Vec<TraceRow> = read_csv(path)?;
    let mut by_node: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    for r in rows {
        if r.state > 1 {
            return Err(Error::parse(path, format!("state {} is not binary", r.state)));
        }
        let hours = by_node.entry(r.node_id).or_default();
        if r.hour_index != hours.len() {
            return Err(Error::parse(
                path,
                format!("node {} hour {} out of order", r.node_id, r.hour_index),
            ));
        }
        hours.push(r.state);
    }
    let traces: Vec<AvailabilityTrace> = by_node
        .into_iter()
        .map(|(node_id, hours)| AvailabilityTrace { node_id, start_epoch, hours })
        .collect();
    if let Some(first) = traces.first() {
        if traces.iter().any(|t| t.hours.len() != first.hours.len()) {
            return Err(Error::parse(path, "traces have unequal horizons"));
        }
    }
    Ok(traces)
}

pub fn write_workload_csv(path: &Path, header: &ArtifactHeader, workflows: &[Workflow], force: bool) -> Result<()> {
    let rows = workflows.iter().map(|w| WorkloadRow {
        workflow_id: w.workflow_id,
        cpu: w.required.cpu_count,
        ram_gb: w.required.ram_gb,
        storage_gb: w.required.storage_gb,
        duration_s: w.duration_s,
        cc_required: w.cc_required,
        lat: w.user_location.lat,
        lon: w.user_location.lon,
        submit_epoch: w.submit_time,
    });
    write_csv(path, header, rows, force)
}

pub fn read_workload_csv(path: &Path) -> Result<Vec<Workflow>> {
    let rows: Vec<WorkloadRow> = read_csv(path)?;
    rows.into_iter()
        .map(|r| {
            if r.duration_s == 0 {
                return Err(Error::parse(path, format!("workflow {} has zero duration", r.workflow_id)));
            }
            Ok(Workflow {
                workflow_id: r.workflow_id,
                required: CapacityVector::new(r.cpu, r.ram_gb, r.storage_gb)
                    .map_err(|e| Error::parse(path, e.to_string()))?,
                duration_s: r.duration_s,
                cc_required: r.cc_required,
                user_location: GeoPoint::new(r.lat, r.lon).map_err(|e| Error::parse(path, e.to_string()))?,
                submit_time: r.submit_epoch,
            })
        })
        .collect()
}
