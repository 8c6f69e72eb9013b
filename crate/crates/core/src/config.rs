//! Sectioned `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fleet::{AvailabilityProfile, FleetConfig, GeoBox, ProfileKind, ProfileSpec, TierSpec, WorkloadConfig};
use crate::forecast::TrainConfig;
use crate::scheduler::SchedulerKind;
use crate::sim::{ComparisonConfig, SimConfig};
use crate::time::HOUR;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed INI text: `section -> key -> value`, each value remembering its line.
#[derive(Debug, Clone, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| Error::ConfigLine { line, message };
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err(format!("unterminated section header `{content}`")))?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(err("empty section name".into()));
                }
                if ini.sections.contains_key(name) {
                    return Err(err(format!("section [{name}] appears twice")));
                }
                ini.sections.insert(name.to_string(), BTreeMap::new());
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("invalid key `{key}`")));
            }
            let name = section.as_ref().ok_or_else(|| err(format!("key `{key}` appears before any [section]")))?;
            let keys = ini.sections.get_mut(name).expect("section registered");
            if keys.contains_key(key) {
                return Err(err(format!("duplicate key `{name}.{key}`")));
            }
            keys.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
        }
        Ok(ini)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn sections_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.sections
            .keys()
            .filter_map(move |name| name.strip_prefix(prefix).map(|rest| (name.as_str(), rest)))
    }
}

fn strip_comment(line: &str) -> &str {
    let trimmed = line.trim_start();
    if trimmed.starts_with('#') || trimmed.starts_with(';') {
        return "";
    }
    match line.find(" #").or_else(|| line.find(" ;")) {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Typed reads that remember which keys were consumed.
struct Reader<'a> {
    ini: &'a Ini,
    used: BTreeMap<(String, String), ()>,
}

impl<'a> Reader<'a> {
    fn new(ini: &'a Ini) -> Self {
        Reader { ini, used: BTreeMap::new() }
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.ini.entry(section, key) else { return Ok(None) };
        self.used.insert((section.to_string(), key.to_string()), ());
        e.value
            .parse::<T>()
            .map(Some)
            .map_err(|err| Error::ConfigLine { line: e.line, message: format!("{section}.{key} = `{}`: {err}", e.value) })
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)?.ok_or_else(|| Error::MissingKey(format!("{section}.{key}")))
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.ini.entry(section, key) else { return Ok(None) };
        self.used.insert((section.to_string(), key.to_string()), ());
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|err| Error::ConfigLine { line: e.line, message: format!("{section}.{key}: `{s}`: {err}") })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn reject_unknown(&self) -> Result<()> {
        for (section, keys) in &self.ini.sections {
            for (key, e) in keys {
                if !self.used.contains_key(&(section.clone(), key.clone())) {
                    return Err(Error::ConfigLine { line: e.line, message: format!("unknown key `{section}.{key}`") });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub fleet: FleetConfig,
    pub workload: WorkloadConfig,
    pub k_min: usize,
    pub k_max: usize,
    pub train: TrainConfig,
    pub window_min: bool,
    /// `rnn` (trained checkpoint) or `profile` (generator ground truth).
    pub forecaster: String,
    pub sim: SimConfig,
    pub schedulers: Vec<SchedulerKind>,
    pub scales: Vec<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini(&text)
    }

    pub fn from_ini(text: &str) -> Result<Self> {
        let ini = Ini::parse(text)?;
        let mut r = Reader::new(&ini);
        let seed = r.required("run", "seed")?;
        let out_dir = r.get::<String>("run", "out")?.map(PathBuf::from);

        let defaults = FleetConfig::default();
        let mut fleet = FleetConfig {
            node_count: r.required("fleet", "node_count")?,
            jitter: r.or("fleet", "jitter", defaults.jitter)?,
            cc_fraction: r.or("fleet", "cc_fraction", defaults.cc_fraction)?,
            start_epoch: r.or("fleet", "start_epoch", defaults.start_epoch)?,
            horizon_hours: r.or("fleet", "horizon_hours", defaults.horizon_hours)?,
            geo_box: GeoBox {
                lat_min: r.or("fleet", "lat_min", defaults.geo_box.lat_min)?,
                lat_max: r.or("fleet", "lat_max", defaults.geo_box.lat_max)?,
                lon_min: r.or("fleet", "lon_min", defaults.geo_box.lon_min)?,
                lon_max: r.or("fleet", "lon_max", defaults.geo_box.lon_max)?,
            },
            ..defaults
        };
        let tier_sections: Vec<&str> = ini.sections_with_prefix("tier.").map(|(name, _)| name).collect();
        if !tier_sections.is_empty() {
            fleet.tiers = tier_sections
                .into_iter()
                .map(|s| {
                    Ok(TierSpec {
                        cpu: r.required(s, "cpu")?,
                        ram_gb: r.required(s, "ram_gb")?,
                        storage_gb: r.required(s, "storage_gb")?,
                        weight: r.or(s, "weight", 1.0)?,
                    })
                })
                .collect::<Result<_>>()?;
        }
        let profile_sections: Vec<(&str, &str)> = ini.sections_with_prefix("profile.").collect();
        if !profile_sections.is_empty() {
            fleet.profiles = profile_sections
                .into_iter()
                .map(|(s, kind)| {
                    let kind: ProfileKind = kind.parse()?;
                    let base = r.required(s, "base_online_prob")?;
                    let noise = r.required(s, "noise_prob")?;
                    Ok(ProfileSpec {
                        profile: AvailabilityProfile::new(kind, base, noise).map_err(|e| Error::Config(e.to_string()))?,
                        weight: r.required(s, "weight")?,
                    })
                })
                .collect::<Result<_>>()?;
        }
        fleet.validate()?;

        let td = TrainConfig::default();
        let train = TrainConfig {
            epochs: r.or("train", "epochs", td.epochs)?,
            learning_rate: r.or("train", "learning_rate", td.learning_rate)?,
            beta1: r.or("train", "beta1", td.beta1)?,
            beta2: r.or("train", "beta2", td.beta2)?,
            epsilon: r.or("train", "epsilon", td.epsilon)?,
            sequence_length: r.or("train", "sequence_length", td.sequence_length)?,
            batch_size: r.or("train", "batch_size", td.batch_size)?,
            hidden_size: r.or("train", "hidden_size", td.hidden_size)?,
            window_stride: r.or("train", "window_stride", td.window_stride)?,
            holdout_hours: r.or("train", "holdout_hours", td.holdout_hours)?,
            eval_every: r.or("train", "eval_every", td.eval_every)?,
            seed,
        };
        train.validate()?;

        let wd = WorkloadConfig::default();
        let default_window_hour = fleet.horizon_hours.saturating_sub(train.holdout_hours);
        let window_hour: usize = r.or("workload", "window_start_hour", default_window_hour)?;
        let workload = WorkloadConfig {
            count: r.required("workload", "count")?,
            window_start: fleet.start_epoch + window_hour as i64 * HOUR,
            window_hours: r.or("workload", "window_hours", wd.window_hours)?,
            duration_min_s: r.or("workload", "duration_min_s", wd.duration_min_s)?,
            duration_max_s: r.or("workload", "duration_max_s", wd.duration_max_s)?,
            cc_probability: r.or("workload", "cc_probability", wd.cc_probability)?,
            tiers: fleet.tiers.clone(),
            jitter: r.or("workload", "jitter", wd.jitter)?,
            geo_box: fleet.geo_box,
        };
        workload.validate()?;
        let window_end = workload.window_start as f64 + workload.window_hours * HOUR as f64;
        let horizon_end = (fleet.start_epoch + fleet.horizon_hours as i64 * HOUR) as f64;
        if window_end > horizon_end {
            return Err(Error::Config(format!(
                "workload window ends {} h past the trace horizon",
                ((window_end - horizon_end) / HOUR as f64).ceil()
            )));
        }

        let k_min = r.or("cluster", "k_min", 1)?;
        let k_max = r.or("cluster", "k_max", 8)?;
        if k_min == 0 || k_min > k_max {
            return Err(Error::Config(format!("cluster k range {k_min}..={k_max} is empty")));
        }

        let window_min = r.or("forecast", "window_min", false)?;
        let forecaster: String = r.or("forecast", "kind", "rnn".to_string())?;
        if forecaster != "rnn" && forecaster != "profile" {
            return Err(Error::Config(format!("forecast.kind `{forecaster}` (expected rnn or profile)")));
        }

        let sd = SimConfig::default();
        let cache_max: usize = r.or("sched", "cache_max_entries", 0)?;
        let mut sim = SimConfig {
            threshold: r.or("sched", "threshold", sd.threshold)?,
            failure_probability: r.or("sim", "failure_probability", sd.failure_probability)?,
            forced_outage_s: r.or("sim", "forced_outage_s", sd.forced_outage_s)?,
            detection_s: r.or("sim", "detection_s", sd.detection_s)?,
            cache_resume_s: r.or("sim", "cache_resume_s", sd.cache_resume_s)?,
            hub_round_trip_s: r.or("sim", "hub_round_trip_s", sd.hub_round_trip_s)?,
            restage_s: r.or("sim", "restage_s", sd.restage_s)?,
            redeploy_s: r.or("sim", "redeploy_s", sd.redeploy_s)?,
            requeue_backoff_s: r.or("sim", "requeue_backoff_s", sd.requeue_backoff_s)?,
            enclave_build_s: r.or("enclave", "build_s", sd.enclave_build_s)?,
            attestation_s: r.or("enclave", "attestation_s", sd.attestation_s)?,
            cache_max_entries: (cache_max > 0).then_some(cache_max),
            ..sd
        };
        sim.cost.cluster_select_cost_s = r.or("cost", "cluster_select_ms", 5.0)? / 1000.0;
        sim.cost.per_node_sample_cost_s = r.or("cost", "per_node_sample_ms", 1.0)? / 1000.0;
        sim.cost.vela_clusters_sampled = r.or("cost", "vela_clusters", sim.cost.vela_clusters_sampled)?;
        sim.validate()?;

        let schedulers = r.list("sched", "schedulers")?.unwrap_or_else(|| SchedulerKind::ALL.to_vec());
        if schedulers.is_empty() {
            return Err(Error::Config("sched.schedulers is empty".into()));
        }
        let scales = r.list("sim", "scales")?.unwrap_or_else(|| ComparisonConfig::default().scales);
        if scales.contains(&0) {
            return Err(Error::Config("sim.scales entries must be positive".into()));
        }
        r.reject_unknown()?;
        Ok(ExperimentConfig {
            seed,
            out_dir,
            fleet,
            workload,
            k_min,
            k_max,
            train,
            window_min,
            forecaster,
            sim,
            schedulers,
            scales,
        })
    }

    /// Every resolved setting except the seed and output directory, one
    /// `key=value` per line in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let f = &self.fleet;
        kv("fleet.node_count", f.node_count.to_string());
        kv("fleet.jitter", f.jitter.to_string());
        kv("fleet.cc_fraction", f.cc_fraction.to_string());
        kv("fleet.start_epoch", f.start_epoch.to_string());
        kv("fleet.horizon_hours", f.horizon_hours.to_string());
        kv("fleet.geo_box", format!("{:?}", f.geo_box));
        for (i, t) in f.tiers.iter().enumerate() {
            kv(&format!("tier.{i}"), format!("{:?}", t));
        }
        for p in &f.profiles {
            kv(&format!("profile.{}", p.profile.kind), format!("{:?}", p));
        }
        let w = &self.workload;
        kv("workload.count", w.count.to_string());
        kv("workload.window_start", w.window_start.to_string());
        kv("workload.window_hours", w.window_hours.to_string());
        kv("workload.durations", format!("{}..{}", w.duration_min_s, w.duration_max_s));
        kv("workload.cc_probability", w.cc_probability.to_string());
        kv("workload.jitter", w.jitter.to_string());
        kv("cluster.k", format!("{}..={}", self.k_min, self.k_max));
        let t = TrainConfig { seed: 0, ..self.train.clone() };
        kv("train", format!("{:?}", t));
        kv("forecast.window_min", self.window_min.to_string());
        kv("forecast.kind", self.forecaster.clone());
        kv("sim", format!("{:?}", self.sim));
        kv("sched.schedulers", self.schedulers.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","));
        kv("sim.scales", format!("{:?}", self.scales));
        s
    }

    /// First 16 hex digits of the SHA-256 of `canonical()`.
    pub fn digest(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&d[..8])
    }

    pub fn comparison(&self) -> ComparisonConfig {
        ComparisonConfig { scales: self.scales.clone(), schedulers: self.schedulers.clone(), workload: self.workload.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[run]\nseed = 7\n[fleet]\nnode_count = 50\n[workload]\ncount = 50\n";

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = ExperimentConfig::from_ini(MINIMAL).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.fleet.node_count, 50);
        assert_eq!(c.train.epochs, 60);
        assert_eq!(c.schedulers, SchedulerKind::ALL.to_vec());
        assert_eq!(c.scales, vec![10, 50, 150, 500]);
        assert_eq!(c.workload.window_start, WorkloadConfig::default().window_start);
        assert_eq!(c.sim, SimConfig::default());
    }

    #[test]
    fn missing_key_is_named() {
        let err = ExperimentConfig::from_ini("[run]\nseed = 1\n[fleet]\nnode_count = 5\n").unwrap_err();
        assert!(matches!(&err, Error::MissingKey(k) if k == "workload.count"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = format!("{MINIMAL}[train]\nepochs = many\n");
        assert!(matches!(ExperimentConfig::from_ini(&bad), Err(Error::ConfigLine { line: 8, .. })));
        let typo = format!("{MINIMAL}[train]\nepoch = 3\n");
        assert!(matches!(ExperimentConfig::from_ini(&typo), Err(Error::ConfigLine { line: 8, .. })));
        assert!(matches!(Ini::parse("[a]\nno equals\n"), Err(Error::ConfigLine { line: 2, .. })));
        assert!(matches!(Ini::parse("k = 1\n"), Err(Error::ConfigLine { line: 1, .. })));
        assert!(matches!(Ini::parse("[a]\nk = 1\nk = 2\n"), Err(Error::ConfigLine { line: 3, .. })));
    }

    #[test]
    fn comments_lists_and_sections() {
        let text = format!(
            "# header\n{MINIMAL}[sched]\nschedulers = veca, vela ; inline\n[tier.a]\ncpu = 4\nram_gb = 8\nstorage_gb = 64\n"
        );
        let c = ExperimentConfig::from_ini(&text).unwrap();
        assert_eq!(c.schedulers, vec![SchedulerKind::Veca, SchedulerKind::Vela]);
        assert_eq!(c.fleet.tiers.len(), 1);
        assert!(ExperimentConfig::from_ini(&format!("{MINIMAL}[sched]\nschedulers = fifo\n")).is_err());
    }

    #[test]
    fn digest_tracks_settings_but_not_seed() {
        let a = ExperimentConfig::from_ini(MINIMAL).unwrap();
        let b = ExperimentConfig::from_ini(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        let c = ExperimentConfig::from_ini(&format!("{MINIMAL}[train]\nepochs = 2\n")).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 16);
    }
}
