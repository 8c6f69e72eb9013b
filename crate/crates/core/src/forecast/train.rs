use rand::seq::SliceRandom;
use rand::Rng;

use super::encoder::FeatureEncoder;
use super::rnn::{RnnModel, Workspace};
use super::{bce_with_logits, sigmoid};
use crate::error::{Error, Result};
use crate::fleet::AvailabilityTrace;
use crate::rng::{stream_rng, RNN_SHUFFLE};
use crate::time::{hour_of_day, weekday, Timestamp, HOUR};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub sequence_length: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    /// Hours between consecutive training windows of one node; each epoch
    /// shifts the grid by a seeded offset so all hours get visited.
    pub window_stride: usize,
    pub holdout_hours: usize,
    /// Evaluate the holdout every this many epochs (the last epoch always is).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            sequence_length: 24,
            batch_size: 64,
            hidden_size: 128,
            window_stride: 24,
            holdout_hours: 4 * 7 * 24,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("sequence_length", self.sequence_length),
            ("batch_size", self.batch_size),
            ("hidden_size", self.hidden_size),
            ("window_stride", self.window_stride),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("train.learning_rate and train.epsilon must be positive".into()));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam beta {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// A source of fixed-length labelled sequences.
pub trait SequenceDataset {
    fn input_size(&self) -> usize;
    fn sequence_length(&self) -> usize;
    /// Sample handles visited in one epoch, before shuffling.
    fn epoch_samples(&self, epoch: usize, seed: u64) -> Vec<usize>;
    fn holdout_samples(&self) -> Vec<usize>;
    /// Writes the sample's inputs into `xs` (length × input) and returns its label.
    fn fill(&self, sample: usize, xs: &mut [f64]) -> f64;
}

/// Explicit `(sequence, label)` pairs; every pair is used every epoch.
#[derive(Debug, Clone)]
pub struct PairDataset {
    input_size: usize,
    sequence_length: usize,
    xs: Vec<f64>,
    labels: Vec<f64>,
}

impl PairDataset {
    pub fn new(pairs: &[(Vec<Vec<f64>>, f64)]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::Data("empty training set".into()))?;
        let len = first.0.len();
        let width = first.0.first().map(Vec::len).unwrap_or(0);
        if len == 0 || width == 0 {
            return Err(Error::Data("sequences must be non-empty".into()));
        }
        let mut xs = Vec::with_capacity(pairs.len() * len * width);
        let mut labels = Vec::with_capacity(pairs.len());
        for (i, (seq, y)) in pairs.iter().enumerate() {
            if *y != 0.0 && *y != 1.0 {
                return Err(Error::Data(format!("label {y} of pair {i} is not 0 or 1")));
            }
            if seq.len() != len || seq.iter().any(|x| x.len() != width) {
                return Err(Error::Dimension(format!("pair {i} does not match {len}x{width}")));
            }
            xs.extend(seq.iter().flatten());
            labels.push(*y);
        }
        Ok(PairDataset { input_size: width, sequence_length: len, xs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl SequenceDataset for PairDataset {
    fn input_size(&self) -> usize {
        self.input_size
    }
    fn sequence_length(&self) -> usize {
        self.sequence_length
    }
    fn epoch_samples(&self, _: usize, _: u64) -> Vec<usize> {
        (0..self.len()).collect()
    }
    fn holdout_samples(&self) -> Vec<usize> {
        Vec::new()
    }
    fn fill(&self, sample: usize, xs: &mut [f64]) -> f64 {
        let n = self.sequence_length * self.input_size;
        xs.copy_from_slice(&self.xs[sample * n..(sample + 1) * n]);
        self.labels[sample]
    }
}

/// Sliding windows over hourly traces: the features of hours `t-L..t`
/// predict the state at hour `t`. The last `holdout_hours` are held out.
#[derive(Debug, Clone)]
pub struct TraceDataset {
    pub encoder: FeatureEncoder,
    pub sequence_length: usize,
    pub window_stride: usize,
    pub train_end: usize,
    states: Vec<Vec<u8>>,
    hour_features: Vec<(usize, f64)>,
}

impl TraceDataset {
    pub fn new(traces: &[AvailabilityTrace], config: &TrainConfig) -> Result<Self> {
        let first = traces.first().ok_or_else(|| Error::Data("no traces to train on".into()))?;
        let horizon = first.hours.len();
        let start = first.start_epoch;
        for (i, tr) in traces.iter().enumerate() {
            if tr.node_id != i {
                return Err(Error::Data(format!("trace {i} belongs to node {}", tr.node_id)));
            }
            if tr.hours.len() != horizon || tr.start_epoch != start {
                return Err(Error::Data("traces must share start and horizon".into()));
            }
            if let Some(bad) = tr.hours.iter().find(|&&s| s > 1) {
                return Err(Error::Data(format!("node {i} has non-binary state {bad}")));
            }
        }
        let l = config.sequence_length;
        let train_end = horizon.saturating_sub(config.holdout_hours);
        if train_end <= l {
            return Err(Error::Data(format!(
                "horizon {horizon} h leaves no training windows of length {l} after a {} h holdout",
                config.holdout_hours
            )));
        }
        let hod = |h: usize| hour_of_day(start + h as Timestamp * HOUR);
        let encoder = FeatureEncoder::fit(traces.len(), (0..train_end).map(hod))?;
        let hour_features = (0..horizon)
            .map(|h| {
                let t = start + h as Timestamp * HOUR;
                (weekday(t), encoder.scale_hour(hour_of_day(t)))
            })
            .collect();
        Ok(TraceDataset {
            encoder,
            sequence_length: l,
            window_stride: config.window_stride,
            train_end,
            states: traces.iter().map(|t| t.hours.clone()).collect(),
            hour_features,
        })
    }

    fn horizon(&self) -> usize {
        self.hour_features.len()
    }

    fn pack(&self, node: usize, hour: usize) -> usize {
        node * self.horizon() + hour
    }
}

impl SequenceDataset for TraceDataset {
    fn input_size(&self) -> usize {
        self.encoder.width()
    }

    fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    fn epoch_samples(&self, epoch: usize, seed: u64) -> Vec<usize> {
        let mut rng = stream_rng(seed, &[RNN_SHUFFLE, epoch as u64, 0]);
        let mut out = Vec::new();
        for node in 0..self.states.len() {
            let offset = rng.random_range(0..self.window_stride);
            let mut t = self.sequence_length + offset;
            while t < self.train_end {
                out.push(self.pack(node, t));
                t += self.window_stride;
            }
        }
        out
    }

    fn holdout_samples(&self) -> Vec<usize> {
        let first = self.train_end.max(self.sequence_length);
        (0..self.states.len())
            .flat_map(|n| (first..self.horizon()).map(move |t| (n, t)))
            .map(|(n, t)| self.pack(n, t))
            .collect()
    }

    fn fill(&self, sample: usize, xs: &mut [f64]) -> f64 {
        let (node, t) = (sample / self.horizon(), sample % self.horizon());
        let ni = self.encoder.width();
        let nn = self.encoder.num_nodes;
        xs.fill(0.0);
        for (s, h) in (t - self.sequence_length..t).enumerate() {
            let row = &mut xs[s * ni..(s + 1) * ni];
            let (wd, z) = self.hour_features[h];
            row[node] = 1.0;
            row[nn + wd] = 1.0;
            row[nn + 7] = z;
        }
        self.states[node][t] as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub mean_loss: f64,
    pub holdout_accuracy: Option<f64>,
}

/// Mean loss and gradient of the batch, written into `grad` (overwritten).
pub fn batch_loss_and_grad(
    model: &RnnModel,
    data: &dyn SequenceDataset,
    batch: &[usize],
    grad: &mut [f64],
) -> f64 {
    let mut ws = Workspace::default();
    let mut xs = vec![0.0; data.sequence_length() * data.input_size()];
    grad.fill(0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &s in batch {
        let y = data.fill(s, &mut xs);
        let logit = model.forward_ws(&xs, &mut ws);
        loss += bce_with_logits(logit, y);
        model.backward_ws(&xs, &mut ws, (sigmoid(logit) - y) * scale, grad);
    }
    loss * scale
}

pub fn batch_loss(model: &RnnModel, data: &dyn SequenceDataset, batch: &[usize]) -> f64 {
    let mut ws = Workspace::default();
    let mut xs = vec![0.0; data.sequence_length() * data.input_size()];
    batch
        .iter()
        .map(|&s| {
            let y = data.fill(s, &mut xs);
            bce_with_logits(model.forward_ws(&xs, &mut ws), y)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Fraction of samples whose thresholded prediction (0.5) equals the label.
pub fn accuracy(model: &RnnModel, data: &dyn SequenceDataset, samples: &[usize]) -> f64 {
    let mut ws = Workspace::default();
    let mut xs = vec![0.0; data.sequence_length() * data.input_size()];
    let hits = samples
        .iter()
        .filter(|&&s| {
            let y = data.fill(s, &mut xs);
            (model.forward_ws(&xs, &mut ws) >= 0.0) == (y == 1.0)
        })
        .count();
    hits as f64 / samples.len().max(1) as f64
}

pub fn train(
    mut model: RnnModel,
    data: &dyn SequenceDataset,
    config: &TrainConfig,
) -> Result<(RnnModel, Vec<LossPoint>)> {
    config.validate()?;
    if model.input_size != data.input_size() {
        return Err(Error::Dimension(format!(
            "model input {} != dataset width {}",
            model.input_size,
            data.input_size()
        )));
    }
    let holdout = data.holdout_samples();
    let mut adam = Adam::new(model.params.len(), config);
    let mut grad = vec![0.0; model.params.len()];
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut samples = data.epoch_samples(epoch, config.seed);
        if samples.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        samples.shuffle(&mut stream_rng(config.seed, &[RNN_SHUFFLE, epoch as u64, 1]));
        let mut total = 0.0;
        for batch in samples.chunks(config.batch_size) {
            total += batch_loss_and_grad(&model, data, batch, &mut grad) * batch.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        let evaluate = !holdout.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs);
        curve.push(LossPoint {
            epoch,
            mean_loss: total / samples.len() as f64,
            holdout_accuracy: evaluate.then(|| accuracy(&model, data, &holdout)),
        });
    }
    Ok((model, curve))
}
