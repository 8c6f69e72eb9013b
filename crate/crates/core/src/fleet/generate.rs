use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    AvailabilityProfile, AvailabilityTrace, CapacityVector, GeoPoint, ProfileKind, VecNode,
    Workflow,
};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::time::{Timestamp, DEFAULT_START_EPOCH, HOUR};

/// Center of a capacity tier. Nodes and workflow requirements are drawn
/// around these with a uniform relative jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierSpec {
    pub cpu: f64,
    pub ram_gb: f64,
    pub storage_gb: f64,
    pub weight: f64,
}

impl TierSpec {
    pub const fn new(cpu: f64, ram_gb: f64, storage_gb: f64) -> Self {
        TierSpec { cpu, ram_gb, storage_gb, weight: 1.0 }
    }

    /// Four hardware archetypes: compute workstation, memory server,
    /// storage box and small edge device.
    pub fn defaults() -> Vec<TierSpec> {
        vec![
            TierSpec::new(32.0, 16.0, 256.0),
            TierSpec::new(8.0, 64.0, 256.0),
            TierSpec::new(8.0, 16.0, 2048.0),
            TierSpec::new(4.0, 8.0, 64.0),
        ]
    }

    fn sample(&self, jitter: f64, rng: &mut SimRng) -> CapacityVector {
        let mut scale = || {
            if jitter > 0.0 {
                rng.random_range(1.0 - jitter..=1.0 + jitter)
            } else {
                1.0
            }
        };
        let cpu = (self.cpu * scale()).round().max(1.0) as u32;
        let ram_gb = self.ram_gb * scale();
        let storage_gb = self.storage_gb * scale();
        CapacityVector { cpu_count: cpu, ram_gb, storage_gb }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    /// Contiguous United States.
    pub const CONUS: GeoBox = GeoBox { lat_min: 25.0, lat_max: 49.0, lon_min: -125.0, lon_max: -67.0 };

    fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(Error::Config(format!("empty geo bounding box {self:?}")));
        }
        GeoPoint::new(self.lat_min, self.lon_min)?;
        GeoPoint::new(self.lat_max, self.lon_max)?;
        Ok(())
    }

    fn sample(&self, rng: &mut SimRng) -> GeoPoint {
        GeoPoint {
            lat: rng.random_range(self.lat_min..self.lat_max),
            lon: rng.random_range(self.lon_min..self.lon_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSpec {
    pub profile: AvailabilityProfile,
    pub weight: f64,
}

impl ProfileSpec {
    pub fn defaults() -> Vec<ProfileSpec> {
        let spec = |kind, base, noise, weight| ProfileSpec {
            profile: AvailabilityProfile { kind, base_online_prob: base, noise_prob: noise },
            weight,
        };
        vec![
            spec(ProfileKind::OfficeHoursLimited, 1.0, 0.03, 0.35),
            spec(ProfileKind::AlwaysOn, 1.0, 0.03, 0.30),
            spec(ProfileKind::NightOnly, 1.0, 0.03, 0.20),
            spec(ProfileKind::Erratic, 0.6, 0.0, 0.15),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub node_count: usize,
    pub tiers: Vec<TierSpec>,
    /// Relative half-width of the uniform capacity jitter.
    pub jitter: f64,
    pub cc_fraction: f64,
    pub geo_box: GeoBox,
    pub profiles: Vec<ProfileSpec>,
    pub start_epoch: Timestamp,
    pub horizon_hours: usize,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            node_count: 50,
            tiers: TierSpec::defaults(),
            jitter: 0.1,
            cc_fraction: 0.3,
            geo_box: GeoBox::CONUS,
            profiles: ProfileSpec::defaults(),
            start_epoch: DEFAULT_START_EPOCH,
            horizon_hours: 8760,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::Config("fleet.node_count must be at least 1".into()));
        }
        validate_tiers(&self.tiers)?;
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("fleet.jitter = {} outside [0, 1)", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.cc_fraction) {
            return Err(Error::Config(format!("fleet.cc_fraction = {} outside [0, 1]", self.cc_fraction)));
        }
        self.geo_box.validate()?;
        if self.profiles.is_empty() {
            return Err(Error::Config("at least one availability profile is required".into()));
        }
        for p in &self.profiles {
            AvailabilityProfile::new(p.profile.kind, p.profile.base_online_prob, p.profile.noise_prob)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        check_weights(self.profiles.iter().map(|p| p.weight), "profile")?;
        if self.start_epoch % HOUR != 0 {
            return Err(Error::Config("fleet.start_epoch must be hour-aligned".into()));
        }
        if self.horizon_hours < 24 {
            return Err(Error::Config("trace horizon must be at least 24 hours".into()));
        }
        Ok(())
    }

    /// Profile parameters for a kind, as configured.
    pub fn profile_for(&self, kind: ProfileKind) -> Option<AvailabilityProfile> {
        self.profiles.iter().map(|p| p.profile).find(|p| p.kind == kind)
    }
}

fn validate_tiers(tiers: &[TierSpec]) -> Result<()> {
    if tiers.is_empty() {
        return Err(Error::Config("at least one capacity tier is required".into()));
    }
    for (i, t) in tiers.iter().enumerate() {
        if !(t.cpu >= 1.0 && t.ram_gb > 0.0 && t.storage_gb > 0.0) {
            return Err(Error::Config(format!("tier {i} has a non-positive center")));
        }
    }
    check_weights(tiers.iter().map(|t| t.weight), "tier")
}

fn check_weights(weights: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Config(format!("{what} weights must be finite and non-negative")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::Config(format!("{what} weights sum to zero")));
    }
    Ok(())
}

/// Splits `n` items over categories proportionally to `weights` using the
/// largest-remainder rule (ties to the lower index).
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

fn shuffled_labels(n: usize, weights: &[f64], rng: &mut SimRng) -> Vec<usize> {
    let mut labels: Vec<usize> = apportion(n, weights)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c))
        .collect();
    labels.shuffle(rng);
    labels
}

pub fn generate_fleet(config: &FleetConfig, seed: u64) -> Result<Vec<VecNode>> {
    generate_fleet_with_tiers(config, seed).map(|(nodes, _)| nodes)
}

/// Like [`generate_fleet`], also returning the tier index each node was drawn from.
pub fn generate_fleet_with_tiers(config: &FleetConfig, seed: u64) -> Result<(Vec<VecNode>, Vec<usize>)> {
    config.validate()?;
    let mut rng = rng::stream_rng(seed, &[rng::FLEET]);
    let n = config.node_count;
    let tier_weights: Vec<f64> = config.tiers.iter().map(|t| t.weight).collect();
    let profile_weights: Vec<f64> = config.profiles.iter().map(|p| p.weight).collect();
    let tiers = shuffled_labels(n, &tier_weights, &mut rng);
    let profiles = shuffled_labels(n, &profile_weights, &mut rng);

    let nodes = (0..n)
        .map(|node_id| VecNode {
            node_id,
            capacity: config.tiers[tiers[node_id]].sample(config.jitter, &mut rng),
            location: config.geo_box.sample(&mut rng),
            cc_capable: rng.random::<f64>() < config.cc_fraction,
            profile: config.profiles[profiles[node_id]].profile,
        })
        .collect();
    Ok((nodes, tiers))
}

pub fn generate_traces(
    fleet: &[VecNode],
    start_epoch: Timestamp,
    horizon_hours: usize,
    seed: u64,
) -> Result<Vec<AvailabilityTrace>> {
    if horizon_hours < 24 {
        return Err(Error::Config(format!("trace horizon {horizon_hours} h is shorter than 24 h")));
    }
    Ok(fleet
        .iter()
        .map(|node| {
            let mut rng = rng::stream_rng(seed, &[rng::TRACES, node.node_id as u64]);
            let p = node.profile;
            let hours = (0..horizon_hours)
                .map(|h| {
                    let t = start_epoch + h as i64 * HOUR;
                    let on = p.kind.scheduled_on(t) && rng.random::<f64>() < p.base_online_prob;
                    let flip = rng.random::<f64>() < p.noise_prob;
                    (on ^ flip) as u8
                })
                .collect();
            AvailabilityTrace { node_id: node.node_id, start_epoch, hours }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub count: usize,
    pub window_start: Timestamp,
    pub window_hours: f64,
    pub duration_min_s: u32,
    pub duration_max_s: u32,
    pub cc_probability: f64,
    /// Requirement centers; normally the fleet's tiers.
    pub tiers: Vec<TierSpec>,
    pub jitter: f64,
    pub geo_box: GeoBox,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let fleet = FleetConfig::default();
        WorkloadConfig {
            count: 50,
            // Start of the final four weeks, which the forecaster never trains on.
            window_start: fleet.start_epoch + (fleet.horizon_hours as i64 - 672) * HOUR,
            window_hours: 48.0,
            duration_min_s: 60,
            duration_max_s: 1800,
            cc_probability: 0.2,
            tiers: fleet.tiers,
            jitter: 0.1,
            geo_box: fleet.geo_box,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("workload.count must be at least 1".into()));
        }
        if !(self.window_hours > 0.0) {
            return Err(Error::Config("workload.window_hours must be positive".into()));
        }
        if self.duration_min_s == 0 || self.duration_min_s > self.duration_max_s {
            return Err(Error::Config("workload durations need 0 < min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.cc_probability) {
            return Err(Error::Config("workload.cc_probability outside [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config("workload.jitter outside [0, 1)".into()));
        }
        validate_tiers(&self.tiers)?;
        self.geo_box.validate()
    }
}

pub fn generate_workloads(config: &WorkloadConfig, seed: u64) -> Result<Vec<Workflow>> {
    config.validate()?;
    let mut rng = rng::stream_rng(seed, &[rng::WORKLOAD]);
    let window_s = config.window_hours * HOUR as f64;
    let total_weight: f64 = config.tiers.iter().map(|t| t.weight).sum();
    let mut drafts: Vec<Workflow> = (0..config.count)
        .map(|_| {
            let offset = (rng.random::<f64>() * window_s).floor() as i64;
            let mut pick = rng.random::<f64>() * total_weight;
            let tier = config
                .tiers
                .iter()
                .position(|t| {
                    pick -= t.weight;
                    pick < 0.0
                })
                .unwrap_or(config.tiers.len() - 1);
            Workflow {
                workflow_id: 0,
                required: config.tiers[tier].sample(config.jitter, &mut rng),
                duration_s: rng.random_range(config.duration_min_s..=config.duration_max_s),
                cc_required: rng.random::<f64>() < config.cc_probability,
                user_location: config.geo_box.sample(&mut rng),
                submit_time: config.window_start + offset,
            }
        })
        .collect();
    // Stable sort keeps generation order among equal submit times.
    drafts.sort_by_key(|w| w.submit_time);
    for (i, w) in drafts.iter_mut().enumerate() {
        w.workflow_id = i as u64;
    }
    Ok(drafts)
}
