#![allow(dead_code)]

use vecsim_core::clustering::CapacityClusters;
use vecsim_core::fleet::{
    generate_fleet, generate_traces, generate_workloads, AvailabilityTrace, FleetConfig, VecNode, Workflow,
    WorkloadConfig,
};

pub struct World {
    pub fleet: Vec<VecNode>,
    pub traces: Vec<AvailabilityTrace>,
    pub workloads: Vec<Workflow>,
    pub clusters: CapacityClusters,
}

/// Fleet, traces, clustering and workload from the default generators.
pub fn world(fleet_cfg: &FleetConfig, workload_cfg: &WorkloadConfig, seed: u64) -> World {
    let fleet = generate_fleet(fleet_cfg, seed).unwrap();
    let traces = generate_traces(&fleet, fleet_cfg.start_epoch, fleet_cfg.horizon_hours, seed).unwrap();
    let workloads = generate_workloads(workload_cfg, seed).unwrap();
    let (clusters, _) = CapacityClusters::fit(&fleet, 1..=8, seed).unwrap();
    World { fleet, traces, workloads, clusters }
}

pub fn default_world(seed: u64) -> World {
    world(&FleetConfig::default(), &WorkloadConfig::default(), seed)
}

pub fn bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Straightforward tanh RNN over the model's accessors; returns the final logit.
pub fn oracle_logit(m: &vecsim_core::forecast::RnnModel, seq: &[Vec<f64>]) -> f64 {
    let hsz = m.hidden_size;
    let mut h = vec![0.0; hsz];
    for x in seq {
        let mut next = vec![0.0; hsz];
        for (i, out) in next.iter_mut().enumerate() {
            let mut a = m.b_ih()[i] + m.b_hh()[i];
            for (j, xj) in x.iter().enumerate() {
                a += m.w_ih(i, j) * xj;
            }
            for (j, hj) in h.iter().enumerate() {
                a += m.w_hh(i, j) * hj;
            }
            *out = a.tanh();
        }
        h = next;
    }
    m.b_o() + m.w_ho().iter().zip(&h).map(|(w, h)| w * h).sum::<f64>()
}

pub fn oracle_loss(m: &vecsim_core::forecast::RnnModel, pairs: &[(Vec<Vec<f64>>, f64)]) -> f64 {
    mean(&pairs.iter().map(|(s, y)| bce(oracle_logit(m, s), *y)).collect::<Vec<_>>())
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn gradient_check(input: usize, hidden: usize, len: usize, batch: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    use vecsim_core::forecast::{batch_loss_and_grad, PairDataset, RnnModel};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut model = RnnModel::init(input, hidden, seed).unwrap();
    for p in model.params.iter_mut() {
        *p = rng.random_range(-0.8..0.8);
    }
    let pairs: Vec<(Vec<Vec<f64>>, f64)> = (0..batch)
        .map(|_| {
            let seq = (0..len).map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            (seq, rng.random_range(0..2) as f64)
        })
        .collect();
    let data = PairDataset::new(&pairs).unwrap();
    let idx: Vec<usize> = (0..batch).collect();
    let mut grad = vec![0.0; model.params.len()];
    let loss = batch_loss_and_grad(&model, &data, &idx, &mut grad);
    assert!((loss - oracle_loss(&model, &pairs)).abs() < 1e-12, "library loss disagrees with oracle");

    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..model.params.len() {
        let orig = model.params[k];
        model.params[k] = orig + h;
        let up = oracle_loss(&model, &pairs);
        model.params[k] = orig - h;
        let down = oracle_loss(&model, &pairs);
        model.params[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (grad[k] - numeric).abs() / (grad[k].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
