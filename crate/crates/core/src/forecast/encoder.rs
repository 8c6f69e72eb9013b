use crate::error::{Error, Result};
use crate::time::{hour_of_day, weekday, Timestamp};

pub const WEEKDAY_WIDTH: usize = 7;

/// `[one_hot(node) | one_hot(weekday) | z(hour)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    pub num_nodes: usize,
    pub hour_mean: f64,
    pub hour_std: f64,
}

impl FeatureEncoder {
    /// Fits the hour scaler on the hour-of-day values of the training rows.
    pub fn fit(num_nodes: usize, hours: impl IntoIterator<Item = usize>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for h in hours {
            n += 1;
            sum += h as f64;
            sq += (h * h) as f64;
        }
        if n == 0 || num_nodes == 0 {
            return Err(Error::Data("encoder needs at least one node and one training row".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(FeatureEncoder { num_nodes, hour_mean: mean, hour_std: std })
    }

    pub fn width(&self) -> usize {
        self.num_nodes + WEEKDAY_WIDTH + 1
    }

    pub fn check_node(&self, node_id: usize) -> Result<()> {
        if node_id >= self.num_nodes {
            return Err(Error::UnknownVolunteer { node_id, num_nodes: self.num_nodes });
        }
        Ok(())
    }

    pub fn scale_hour(&self, hour: usize) -> f64 {
        (hour as f64 - self.hour_mean) / self.hour_std
    }

    /// Writes the encoding into `out`, which must be `width()` long and is
    /// fully overwritten.
    pub fn encode_into(&self, node_id: usize, weekday: usize, hour: usize, out: &mut [f64]) -> Result<()> {
        self.check_node(node_id)?;
        if weekday >= WEEKDAY_WIDTH || hour >= 24 {
            return Err(Error::Data(format!("weekday {weekday} / hour {hour} out of range")));
        }
        if out.len() != self.width() {
            return Err(Error::Dimension(format!("encoding buffer {} != width {}", out.len(), self.width())));
        }
        out.fill(0.0);
        out[node_id] = 1.0;
        out[self.num_nodes + weekday] = 1.0;
        out[self.num_nodes + WEEKDAY_WIDTH] = self.scale_hour(hour);
        Ok(())
    }

    pub fn encode_at(&self, node_id: usize, t: Timestamp, out: &mut [f64]) -> Result<()> {
        self.encode_into(node_id, weekday(t), hour_of_day(t), out)
    }
}

pub fn encode_features(encoder: &FeatureEncoder, node_id: usize, weekday: usize, hour: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; encoder.width()];
    encoder.encode_into(node_id, weekday, hour, &mut v)?;
    Ok(v)
}
