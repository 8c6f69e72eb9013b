//! Availability forecasting: feature encoding, the recurrent model, training
//! and the `Forecaster` interface the schedulers consume.

mod encoder;
mod rnn;
mod train;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

pub use encoder::{encode_features, FeatureEncoder, WEEKDAY_WIDTH};
pub use rnn::{param_count, rnn_forward, RnnModel};
pub use train::{
    accuracy, batch_loss, batch_loss_and_grad, train, Adam, LossPoint, PairDataset, SequenceDataset, TraceDataset,
    TrainConfig,
};

use crate::artifact::{write_atomic, write_csv, ArtifactHeader};
use crate::error::{Error, Result};
use crate::fleet::{AvailabilityProfile, VecNode};
use crate::time::{Timestamp, HOUR};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(o,0) - o*y + ln(1 + e^{-|o|})`.
pub fn bce_with_logits(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Keeps probabilities off the exact endpoints that `sigmoid` reaches in
/// floating point for |logit| above ~37.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityForecast {
    pub node_id: usize,
    pub t: Timestamp,
    pub predicted_availability: f64,
}

/// A trained network bundled with the encoder and window length it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub rnn: RnnModel,
    pub encoder: FeatureEncoder,
    pub sequence_length: usize,
}

const CHECKPOINT_MAGIC: &str = "vecsim-rnn v1";

impl ForecastModel {
    /// Final-step logit for a history, padded at the front with its earliest step.
    pub fn logit(&self, history: &[Vec<f64>]) -> Result<f64> {
        let first = history.first().ok_or_else(|| Error::Dimension("history must be non-empty".into()))?;
        let l = self.sequence_length;
        let seq: Vec<Vec<f64>> = if history.len() >= l {
            history[history.len() - l..].to_vec()
        } else {
            std::iter::repeat_n(first.clone(), l - history.len()).chain(history.iter().cloned()).collect()
        };
        let (logits, _) = rnn_forward(&self.rnn, &seq, None)?;
        Ok(*logits.last().expect("non-empty"))
    }

    /// Encoded features of the `sequence_length` hours preceding the hour containing `t`.
    pub fn history_at(&self, node_id: usize, t: Timestamp) -> Result<Vec<Vec<f64>>> {
        let hour_start = t.div_euclid(HOUR) * HOUR;
        (1..=self.sequence_length as i64)
            .rev()
            .map(|back| {
                let mut x = vec![0.0; self.encoder.width()];
                self.encoder.encode_at(node_id, hour_start - back * HOUR, &mut x)?;
                Ok(x)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "input_size {}", self.rnn.input_size);
        let _ = writeln!(s, "hidden_size {}", self.rnn.hidden_size);
        let _ = writeln!(s, "num_nodes {}", self.encoder.num_nodes);
        let _ = writeln!(s, "hour_mean {:e}", self.encoder.hour_mean);
        let _ = writeln!(s, "hour_std {:e}", self.encoder.hour_std);
        let _ = writeln!(s, "sequence_length {}", self.sequence_length);
        let _ = writeln!(s, "params {}", self.rnn.params.len());
        for p in &self.rnn.params {
            let _ = writeln!(s, "{p:e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let bad = |m: String| Error::Data(format!("checkpoint: {m}"));
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing `vecsim-rnn v1` header".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == name => Ok(v.to_string()),
                _ => Err(bad(format!("expected `{name}`, found `{line}`"))),
            }
        };
        let num = |v: String| v.parse::<usize>().map_err(|e| bad(e.to_string()));
        let real = |v: String| v.parse::<f64>().map_err(|e| bad(e.to_string()));
        let input_size = num(field("input_size")?)?;
        let hidden_size = num(field("hidden_size")?)?;
        let num_nodes = num(field("num_nodes")?)?;
        let hour_mean = real(field("hour_mean")?)?;
        let hour_std = real(field("hour_std")?)?;
        let sequence_length = num(field("sequence_length")?)?;
        let count = num(field("params")?)?;
        let params = lines
            .take(count)
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if params.len() != count {
            return Err(bad(format!("expected {count} parameters, found {}", params.len())));
        }
        let encoder = FeatureEncoder { num_nodes, hour_mean, hour_std };
        if encoder.width() != input_size {
            return Err(bad(format!("input size {input_size} does not match {num_nodes} nodes")));
        }
        Ok(ForecastModel { rnn: RnnModel::from_params(input_size, hidden_size, params)?, encoder, sequence_length })
    }

    pub fn save(&self, path: &Path, header: &ArtifactHeader, force: bool) -> Result<()> {
        write_atomic(path, (header.line() + &self.to_text()).as_bytes(), force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::parse(path, e.to_string()))
    }
}

pub fn predict_availability(
    model: &ForecastModel,
    node_id: usize,
    t: Timestamp,
    history: &[Vec<f64>],
) -> Result<AvailabilityForecast> {
    model.encoder.check_node(node_id)?;
    let p = sigmoid(model.logit(history)?).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    Ok(AvailabilityForecast { node_id, t, predicted_availability: p })
}

/// Trains a fresh model on traces; returns the bundle and its loss curve.
pub fn train_on_traces(
    traces: &[crate::fleet::AvailabilityTrace],
    config: &TrainConfig,
) -> Result<(ForecastModel, Vec<LossPoint>)> {
    config.validate()?;
    let data = TraceDataset::new(traces, config)?;
    let init = RnnModel::init(data.input_size(), config.hidden_size, config.seed)?;
    let (rnn, curve) = train(init, &data, config)?;
    Ok((ForecastModel { rnn, encoder: data.encoder.clone(), sequence_length: config.sequence_length }, curve))
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    mean_loss: f64,
    holdout_accuracy: Option<f64>,
}

pub fn write_loss_curve(path: &Path, header: &ArtifactHeader, curve: &[LossPoint], force: bool) -> Result<()> {
    let rows = curve.iter().map(|p| LossRow {
        epoch: p.epoch,
        mean_loss: p.mean_loss,
        holdout_accuracy: p.holdout_accuracy,
    });
    write_csv(path, header, rows, force)
}

/// Probability that a node is online when a workflow starts at `t` and
/// runs for `duration_s`.
pub trait Forecaster {
    fn availability(&self, node_id: usize, t: Timestamp, duration_s: u32) -> Result<f64>;
}

impl<F: Forecaster + ?Sized> Forecaster for &F {
    fn availability(&self, node_id: usize, t: Timestamp, duration_s: u32) -> Result<f64> {
        (**self).availability(node_id, t, duration_s)
    }
}

/// Hourly predictions from a trained model, memoized per (node, hour).
pub struct RnnForecaster {
    model: ForecastModel,
    /// Score the minimum hourly prediction across the execution window
    /// instead of the start hour alone.
    pub window_min: bool,
    memo: Mutex<HashMap<(usize, i64), f64>>,
}

impl RnnForecaster {
    pub fn new(model: ForecastModel) -> Self {
        RnnForecaster { model, window_min: false, memo: Mutex::new(HashMap::new()) }
    }

    pub fn model(&self) -> &ForecastModel {
        &self.model
    }

    fn hourly(&self, node_id: usize, hour: i64) -> Result<f64> {
        if let Some(&p) = self.memo.lock().expect("memo lock").get(&(node_id, hour)) {
            return Ok(p);
        }
        let t = hour * HOUR;
        let history = self.model.history_at(node_id, t)?;
        let p = predict_availability(&self.model, node_id, t, &history)?.predicted_availability;
        self.memo.lock().expect("memo lock").insert((node_id, hour), p);
        Ok(p)
    }
}

impl Forecaster for RnnForecaster {
    fn availability(&self, node_id: usize, t: Timestamp, duration_s: u32) -> Result<f64> {
        let first = t.div_euclid(HOUR);
        if !self.window_min {
            return self.hourly(node_id, first);
        }
        let last = (t + duration_s.max(1) as i64 - 1).div_euclid(HOUR);
        (first..=last).try_fold(1.0f64, |acc, h| Ok(acc.min(self.hourly(node_id, h)?)))
    }
}

/// Expected hourly availability implied by each node's generating profile.
pub struct ProfileForecaster {
    profiles: Vec<AvailabilityProfile>,
}

impl ProfileForecaster {
    pub fn new(fleet: &[VecNode]) -> Self {
        ProfileForecaster { profiles: fleet.iter().map(|n| n.profile).collect() }
    }
}

impl Forecaster for ProfileForecaster {
    fn availability(&self, node_id: usize, t: Timestamp, _: u32) -> Result<f64> {
        let p = self
            .profiles
            .get(node_id)
            .ok_or(Error::UnknownVolunteer { node_id, num_nodes: self.profiles.len() })?;
        let on = if p.kind.scheduled_on(t) { p.base_online_prob } else { 0.0 };
        Ok((on * (1.0 - p.noise_prob) + (1.0 - on) * p.noise_prob).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
    }
}

/// Wraps a forecaster and counts calls per node query.
pub struct CountingForecaster<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F: Forecaster> CountingForecaster<F> {
    pub fn new(inner: F) -> Self {
        CountingForecaster { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F: Forecaster> Forecaster for CountingForecaster<F> {
    fn availability(&self, node_id: usize, t: Timestamp, duration_s: u32) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.availability(node_id, t, duration_s)
    }
}
