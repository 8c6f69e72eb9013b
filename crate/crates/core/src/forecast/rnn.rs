//! Single-layer Elman network with a scalar logit head.
//!
//! All parameters live in one flat vector so the optimizer and the
//! finite-difference checks can treat them uniformly. Layout:
//! `w_ih` (input-major: column `j` is `w_ih[j*H..(j+1)*H]`), `w_hh`
//! (row-major), `b_ih`, `b_hh`, `w_ho`, `b_o`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, RNN_INIT};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub input_size: usize,
    pub hidden_size: usize,
    pub params: Vec<f64>,
}

pub fn param_count(input_size: usize, hidden_size: usize) -> usize {
    let h = hidden_size;
    input_size * h + h * h + 3 * h + 1
}

impl RnnModel {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Dimension("input and hidden sizes must be positive".into()));
        }
        Ok(RnnModel { input_size, hidden_size, params: vec![0.0; param_count(input_size, hidden_size)] })
    }

    /// Uniform in `±1/sqrt(hidden_size)` for every parameter.
    pub fn init(input_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(input_size, hidden_size)?;
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut rng = stream_rng(seed, &[RNN_INIT]);
        for p in &mut m.params {
            *p = rng.random_range(-bound..bound);
        }
        Ok(m)
    }

    pub fn from_params(input_size: usize, hidden_size: usize, params: Vec<f64>) -> Result<Self> {
        let want = param_count(input_size, hidden_size);
        if params.len() != want {
            return Err(Error::Dimension(format!("expected {want} parameters, got {}", params.len())));
        }
        Ok(RnnModel { input_size, hidden_size, params })
    }

    fn offsets(&self) -> Offsets {
        Offsets::new(self.input_size, self.hidden_size)
    }

    pub fn w_ih(&self, i: usize, j: usize) -> f64 {
        self.params[j * self.hidden_size + i]
    }

    pub fn w_hh(&self, i: usize, j: usize) -> f64 {
        self.params[self.offsets().w_hh + i * self.hidden_size + j]
    }

    pub fn b_ih(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.b_ih..o.b_hh]
    }

    pub fn b_hh(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.b_hh..o.w_ho]
    }

    pub fn w_ho(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.w_ho..o.b_o]
    }

    pub fn b_o(&self) -> f64 {
        self.params[self.offsets().b_o]
    }

    /// Runs the recurrence over `xs` (steps × input, row-major), leaving all
    /// hidden states in `ws` for a later backward pass. Returns the final logit.
    pub(crate) fn forward_ws(&self, xs: &[f64], ws: &mut Workspace) -> f64 {
        let (ni, nh) = (self.input_size, self.hidden_size);
        let steps = xs.len() / ni;
        let o = self.offsets();
        let p = &self.params;
        ws.prepare(steps, nh);
        for t in 0..steps {
            let x = &xs[t * ni..(t + 1) * ni];
            let a = &mut ws.a;
            for i in 0..nh {
                a[i] = p[o.b_ih + i] + p[o.b_hh + i];
            }
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    let col = &p[j * nh..(j + 1) * nh];
                    for i in 0..nh {
                        a[i] += xj * col[i];
                    }
                }
            }
            let (prev, next) = ws.hs.split_at_mut((t + 1) * nh);
            let h_prev = &prev[t * nh..];
            let h_next = &mut next[..nh];
            for i in 0..nh {
                let row = &p[o.w_hh + i * nh..o.w_hh + (i + 1) * nh];
                h_next[i] = (a[i] + dot(row, h_prev)).tanh();
            }
        }
        let h_last = &ws.hs[steps * nh..(steps + 1) * nh];
        dot(&p[o.w_ho..o.b_o], h_last) + p[o.b_o]
    }

    /// Accumulates `dlogit * d(final logit)/d(params)` into `grad`, using the
    /// states left in `ws` by `forward_ws` on the same `xs`.
    pub(crate) fn backward_ws(&self, xs: &[f64], ws: &mut Workspace, dlogit: f64, grad: &mut [f64]) {
        let (ni, nh) = (self.input_size, self.hidden_size);
        let steps = xs.len() / ni;
        let o = self.offsets();
        let p = &self.params;
        let h_last = &ws.hs[steps * nh..(steps + 1) * nh];
        for i in 0..nh {
            grad[o.w_ho + i] += dlogit * h_last[i];
            ws.dh[i] = dlogit * p[o.w_ho + i];
        }
        grad[o.b_o] += dlogit;
        for t in (0..steps).rev() {
            let h = &ws.hs[(t + 1) * nh..(t + 2) * nh];
            let h_prev = &ws.hs[t * nh..(t + 1) * nh];
            for i in 0..nh {
                ws.a[i] = ws.dh[i] * (1.0 - h[i] * h[i]);
            }
            let da = &ws.a;
            for i in 0..nh {
                grad[o.b_ih + i] += da[i];
                grad[o.b_hh + i] += da[i];
            }
            let x = &xs[t * ni..(t + 1) * ni];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    let g = &mut grad[j * nh..(j + 1) * nh];
                    for i in 0..nh {
                        g[i] += xj * da[i];
                    }
                }
            }
            ws.dh_next.fill(0.0);
            for i in 0..nh {
                let di = da[i];
                if di == 0.0 {
                    continue;
                }
                let g = &mut grad[o.w_hh + i * nh..o.w_hh + (i + 1) * nh];
                for j in 0..nh {
                    g[j] += di * h_prev[j];
                }
                if t > 0 {
                    let row = &p[o.w_hh + i * nh..o.w_hh + (i + 1) * nh];
                    for j in 0..nh {
                        ws.dh_next[j] += di * row[j];
                    }
                }
            }
            std::mem::swap(&mut ws.dh, &mut ws.dh_next);
        }
    }

    /// Logits for every step plus the final hidden state.
    pub fn forward_sequence(&self, sequence: &[Vec<f64>], h0: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if sequence.is_empty() {
            return Err(Error::Dimension("sequence must be non-empty".into()));
        }
        if h0.len() != self.hidden_size {
            return Err(Error::Dimension(format!("h0 length {} != hidden size {}", h0.len(), self.hidden_size)));
        }
        let nh = self.hidden_size;
        let o = self.offsets();
        let mut h = h0.to_vec();
        let mut next = vec![0.0; nh];
        let mut logits = Vec::with_capacity(sequence.len());
        for x in sequence {
            if x.len() != self.input_size {
                return Err(Error::Dimension(format!("input width {} != {}", x.len(), self.input_size)));
            }
            for i in 0..nh {
                let mut a = self.params[o.b_ih + i] + self.params[o.b_hh + i];
                for (j, &xj) in x.iter().enumerate() {
                    a += self.params[j * nh + i] * xj;
                }
                a += dot(&self.params[o.w_hh + i * nh..o.w_hh + (i + 1) * nh], &h);
                next[i] = a.tanh();
            }
            std::mem::swap(&mut h, &mut next);
            logits.push(dot(self.w_ho(), &h) + self.b_o());
        }
        Ok((logits, h))
    }
}

pub fn rnn_forward(model: &RnnModel, sequence: &[Vec<f64>], h0: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
    match h0 {
        Some(h) => model.forward_sequence(sequence, h),
        None => model.forward_sequence(sequence, &vec![0.0; model.hidden_size]),
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
    w_ho: usize,
    b_o: usize,
}

impl Offsets {
    fn new(ni: usize, nh: usize) -> Self {
        let w_hh = ni * nh;
        let b_ih = w_hh + nh * nh;
        let b_hh = b_ih + nh;
        let w_ho = b_hh + nh;
        Offsets { w_hh, b_ih, b_hh, w_ho, b_o: w_ho + nh }
    }
}

/// Scratch buffers reused across samples.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    hs: Vec<f64>,
    a: Vec<f64>,
    dh: Vec<f64>,
    dh_next: Vec<f64>,
}

impl Workspace {
    fn prepare(&mut self, steps: usize, nh: usize) {
        self.hs.clear();
        self.hs.resize((steps + 1) * nh, 0.0);
        for v in [&mut self.a, &mut self.dh, &mut self.dh_next] {
            v.clear();
            v.resize(nh, 0.0);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_emits_zero_logits() {
        let m = RnnModel::zeros(3, 5).unwrap();
        let seq = vec![vec![1.0, -2.0, 0.5]; 4];
        let (logits, h) = rnn_forward(&m, &seq, None).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
        assert_eq!(h, vec![0.0; 5]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let m = RnnModel::init(3, 4, 11).unwrap();
        let x = vec![0.3, -1.0, 2.0];
        let (logits, h) = rnn_forward(&m, &[x.clone()], None).unwrap();
        let mut o = m.b_o();
        for i in 0..4 {
            let a: f64 = (0..3).map(|j| m.w_ih(i, j) * x[j]).sum::<f64>() + m.b_ih()[i] + m.b_hh()[i];
            assert!((h[i] - a.tanh()).abs() < 1e-15);
            o += m.w_ho()[i] * a.tanh();
        }
        assert!((logits[0] - o).abs() < 1e-14);
    }

    #[test]
    fn workspace_forward_agrees_with_reference_path() {
        let m = RnnModel::init(6, 7, 3).unwrap();
        let seq: Vec<Vec<f64>> = (0..5).map(|t| (0..6).map(|j| ((t * 6 + j) as f64 * 0.37).sin()).collect()).collect();
        let flat: Vec<f64> = seq.concat();
        let mut ws = Workspace::default();
        let fast = m.forward_ws(&flat, &mut ws);
        let (logits, _) = rnn_forward(&m, &seq, None).unwrap();
        assert!((fast - logits[4]).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let m = RnnModel::zeros(3, 2).unwrap();
        assert!(rnn_forward(&m, &[], None).is_err());
        assert!(rnn_forward(&m, &[vec![0.0; 2]], None).is_err());
        assert!(rnn_forward(&m, &[vec![0.0; 3]], Some(&[0.0])).is_err());
        assert!(RnnModel::from_params(3, 2, vec![0.0; 3]).is_err());
    }
}
