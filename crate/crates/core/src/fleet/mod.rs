//! Synthetic volunteer fleet: node capacities, locations, availability
//! profiles, hourly ground-truth traces, and workflow submissions.

mod generate;
mod io;

pub use generate::{
    apportion, generate_fleet, generate_fleet_with_tiers, generate_traces, generate_workloads,
    FleetConfig, GeoBox, ProfileSpec, TierSpec, WorkloadConfig,
};
pub use io::{
    read_fleet_csv, read_traces_csv, read_workload_csv, write_fleet_csv, write_traces_csv,
    write_workload_csv,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::time::{Timestamp, HOUR};

/// Number of capacity features (CPU, RAM, storage).
pub const CAPACITY_DIMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityVector {
    pub cpu_count: u32,
    pub ram_gb: f64,
    pub storage_gb: f64,
}

impl CapacityVector {
    pub fn new(cpu_count: u32, ram_gb: f64, storage_gb: f64) -> Result<Self> {
        if cpu_count == 0 || !(ram_gb > 0.0) || !(storage_gb > 0.0) {
            return Err(Error::Data(format!(
                "capacity components must be positive (cpu={cpu_count}, ram={ram_gb}, storage={storage_gb})"
            )));
        }
        Ok(CapacityVector { cpu_count, ram_gb, storage_gb })
    }

    pub fn features(&self) -> [f64; CAPACITY_DIMS] {
        [self.cpu_count as f64, self.ram_gb, self.storage_gb]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Data(format!("coordinates out of range: ({lat}, {lon})")));
        }
        Ok(GeoPoint { lat, lon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileKind {
    OfficeHoursLimited,
    AlwaysOn,
    NightOnly,
    Erratic,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::OfficeHoursLimited,
        ProfileKind::AlwaysOn,
        ProfileKind::NightOnly,
        ProfileKind::Erratic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::OfficeHoursLimited => "office_hours_limited",
            ProfileKind::AlwaysOn => "always_on",
            ProfileKind::NightOnly => "night_only",
            ProfileKind::Erratic => "erratic",
        }
    }

    /// Whether the profile's schedule puts the node in its "on" phase at `t`.
    /// Within the on phase the node is online with `base_online_prob`.
    pub fn scheduled_on(self, t: Timestamp) -> bool {
        let hour = crate::time::hour_of_day(t);
        match self {
            ProfileKind::AlwaysOn | ProfileKind::Erratic => true,
            ProfileKind::OfficeHoursLimited => !(crate::time::is_weekday(t) && (9..17).contains(&hour)),
            ProfileKind::NightOnly => !(6..20).contains(&hour),
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProfileKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown availability profile `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityProfile {
    pub kind: ProfileKind,
    pub base_online_prob: f64,
    /// Per-hour probability that the observed state is flipped.
    pub noise_prob: f64,
}

impl AvailabilityProfile {
    pub fn new(kind: ProfileKind, base_online_prob: f64, noise_prob: f64) -> Result<Self> {
        for (name, p) in [("base_online_prob", base_online_prob), ("noise_prob", noise_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Data(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(AvailabilityProfile { kind, base_online_prob, noise_prob })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecNode {
    pub node_id: usize,
    pub capacity: CapacityVector,
    pub location: GeoPoint,
    pub cc_capable: bool,
    pub profile: AvailabilityProfile,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityTrace {
    pub node_id: usize,
    pub start_epoch: Timestamp,
    pub hours: Vec<u8>,
}

impl AvailabilityTrace {
    pub fn horizon_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn end_epoch(&self) -> Timestamp {
        self.start_epoch + self.hours.len() as i64 * HOUR
    }

    /// Index of the hour bucket containing `t`; buckets are closed-open.
    pub fn hour_index(&self, t: Timestamp) -> Result<usize> {
        if t < self.start_epoch || t >= self.end_epoch() {
            return Err(Error::OutOfRange { t, start: self.start_epoch, end: self.end_epoch() });
        }
        Ok(((t - self.start_epoch) / HOUR) as usize)
    }

    pub fn mean(&self) -> f64 {
        if self.hours.is_empty() {
            return 0.0;
        }
        self.hours.iter().map(|&h| h as f64).sum::<f64>() / self.hours.len() as f64
    }
}

pub fn availability_at(trace: &AvailabilityTrace, t: Timestamp) -> Result<u8> {
    trace.hour_index(t).map(|i| trace.hours[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workflow {
    pub workflow_id: u64,
    pub required: CapacityVector,
    pub duration_s: u32,
    pub cc_required: bool,
    pub user_location: GeoPoint,
    pub submit_time: Timestamp,
}

impl Workflow {
    /// Canonical byte form, used as the enclave image descriptor.
    pub fn descriptor(&self) -> Vec<u8> {
        format!(
            "workflow:{};cpu:{};ram:{};storage:{};duration:{};cc:{};lat:{};lon:{};submit:{}",
            self.workflow_id,
            self.required.cpu_count,
            self.required.ram_gb,
            self.required.storage_gb,
            self.duration_s,
            self.cc_required,
            self.user_location.lat,
            self.user_location.lon,
            self.submit_time
        )
        .into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> AvailabilityTrace {
        AvailabilityTrace { node_id: 0, start_epoch: 7200, hours: vec![1, 0, 1] }
    }

    #[test]
    fn availability_lookup_uses_closed_open_buckets() {
        let tr = trace();
        assert_eq!(availability_at(&tr, 7200).unwrap(), 1);
        assert_eq!(availability_at(&tr, 7200 + 3599).unwrap(), 1);
        assert_eq!(availability_at(&tr, 7200 + 3600).unwrap(), 0);
        assert!(matches!(
            availability_at(&tr, 7200 + 3 * 3600),
            Err(Error::OutOfRange { .. })
        ));
        assert!(availability_at(&tr, 7199).is_err());
    }

    #[test]
    fn capacity_rejects_non_positive() {
        assert!(CapacityVector::new(0, 1.0, 1.0).is_err());
        assert!(CapacityVector::new(1, 0.0, 1.0).is_err());
        assert!(CapacityVector::new(1, 1.0, f64::NAN).is_err());
        assert!(CapacityVector::new(1, 1.0, 1.0).is_ok());
    }

    #[test]
    fn geo_bounds() {
        assert!(GeoPoint::new(90.0, -180.0).is_ok());
        assert!(GeoPoint::new(90.1, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.5).is_err());
    }

    #[test]
    fn profile_names_round_trip() {
        for k in ProfileKind::ALL {
            assert_eq!(k.as_str().parse::<ProfileKind>().unwrap(), k);
        }
        assert!("sometimes".parse::<ProfileKind>().is_err());
    }
}
