//! Capacity-based k-means over standardized (CPU, RAM, storage) features,
//! with automated elbow selection of k and a growth-triggered refit rule.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fleet::{CapacityVector, VecNode};
use crate::rng;

/// Per-feature z-scoring. Constant features keep a scale of 1, so they map
/// to 0 instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::Data("cannot standardize an empty set".into()))?;
        let dim = first.len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("points have differing dimensions".into()));
        }
        let n = points.len() as f64;
        let means: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let stddevs = (0..dim)
            .map(|j| {
                let var = points.iter().map(|p| (p[j] - means[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                // Relative cutoff so rounding noise in a constant column counts as constant.
                if sd <= 1e-12 * means[j].abs().max(1.0) { 1.0 } else { sd }
            })
            .collect();
        Ok(Standardizer { means, stddevs })
    }

    pub fn fit_capacities(points: &[CapacityVector]) -> Result<Self> {
        Self::fit(&capacity_features(points))
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stddevs))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.means.iter().zip(&self.stddevs))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_all(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.transform(p)).collect()
    }
}

pub fn capacity_features(points: &[CapacityVector]) -> Vec<Vec<f64>> {
    points.iter().map(|c| c.features().to_vec()).collect()
}

pub fn fit_standardizer(points: &[CapacityVector]) -> Result<Standardizer> {
    Standardizer::fit_capacities(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Lloyd stops once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-SSD run wins.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iter: 300, tol: 1e-4, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in standardized space.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point (node id order for fleets).
    pub assignments: Vec<usize>,
    pub ssd: f64,
    pub node_count_at_fit: usize,
    pub iterations: usize,
    /// SSD after every assignment step of the winning run, final value last.
    pub ssd_history: Vec<f64>,
}

impl ClusterModel {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            members[c].push(i);
        }
        members
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; lowest index wins ties.
pub fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidK { k, points: points.len() });
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("points must share a non-zero dimension".into()));
    }
    Ok(())
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut rng::SimRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut ssd = 0.0;
    for ((p, l), d) in points.iter().zip(labels.iter_mut()).zip(dists.iter_mut()) {
        let (c, dist) = nearest_centroid(centroids, p);
        *l = c;
        *d = dist;
        ssd += dist;
    }
    ssd
}

/// Lloyd iterations from the given initial centroids.
fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, opts: &KMeansOptions) -> ClusterModel {
    let k = init.len();
    let dim = points[0].len();
    let mut centroids = init;
    let mut labels = vec![0; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        history.push(assign(points, &centroids, &mut labels, &mut dists));

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| if c == 0 { old.clone() } else { s.into_iter().map(|v| v / c as f64).collect() })
            .collect();
        // Empty cluster: move it onto the point worst served by its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                next[c] = points[far].clone();
                dists[far] = 0.0;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < opts.tol {
            break;
        }
    }

    let ssd = assign(points, &centroids, &mut labels, &mut dists);
    history.push(ssd);
    ClusterModel {
        k,
        centroids,
        assignments: labels,
        ssd,
        node_count_at_fit: points.len(),
        iterations,
        ssd_history: history,
    }
}

/// Renumbers clusters by ascending centroid (first component, then the rest).
fn canonicalize(mut model: ClusterModel) -> ClusterModel {
    let mut order: Vec<usize> = (0..model.k).collect();
    order.sort_by(|&a, &b| {
        model.centroids[a]
            .iter()
            .zip(&model.centroids[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank = vec![0; model.k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    model.centroids = order.iter().map(|&old| model.centroids[old].clone()).collect();
    for a in &mut model.assignments {
        *a = rank[*a];
    }
    model
}

fn best_of(candidates: impl IntoIterator<Item = ClusterModel>) -> ClusterModel {
    candidates
        .into_iter()
        .reduce(|best, m| if m.ssd < best.ssd { m } else { best })
        .expect("at least one k-means run")
}

fn restarts<'a>(points: &'a [Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> impl Iterator<Item = ClusterModel> + 'a {
    let opts = *opts;
    (0..opts.n_init.max(1)).map(move |r| {
        let mut rng = rng::stream_rng(seed, &[rng::KMEANS, k as u64, r as u64]);
        lloyd(points, kmeans_pp_init(points, k, &mut rng), &opts)
    })
}

pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_fit_with(points, k, seed, &KMeansOptions::default())
}

pub fn kmeans_fit_with(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterModel> {
    check_points(points, k)?;
    Ok(canonicalize(best_of(restarts(points, k, seed, opts))))
}

/// Lloyd run seeded from an existing solution plus the point farthest from
/// its nearest centroid. Its starting SSD can't exceed the previous fit's.
fn split_from(points: &[Vec<f64>], prev: &ClusterModel, opts: &KMeansOptions) -> ClusterModel {
    let mut init = prev.centroids.clone();
    let far = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, nearest_centroid(&init, p).1))
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best })
        .0;
    init.push(points[far].clone());
    lloyd(points, init, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowResult {
    pub k_optimal: usize,
    pub curve: Vec<(usize, f64)>,
    /// One fitted model per k on the curve.
    pub models: Vec<ClusterModel>,
    pub warnings: Vec<String>,
}

impl ElbowResult {
    pub fn best_model(&self) -> &ClusterModel {
        let i = self.curve.iter().position(|&(k, _)| k == self.k_optimal).expect("k_optimal is on the curve");
        &self.models[i]
    }
}

pub fn elbow_select_k(points: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<ElbowResult> {
    elbow_select_k_with(points, k_range, seed, &KMeansOptions::default())
}

pub fn elbow_select_k_with(
    points: &[Vec<f64>],
    k_range: RangeInclusive<usize>,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ElbowResult> {
    let (k_min, mut k_max) = (*k_range.start(), *k_range.end());
    if points.is_empty() {
        return Err(Error::InvalidK { k: k_min, points: 0 });
    }
    if k_min == 0 || k_min > k_max {
        return Err(Error::Config(format!("invalid k range {k_min}..={k_max}")));
    }
    let mut warnings = Vec::new();
    if k_max > points.len() {
        warnings.push(format!("k range truncated from {k_max} to {} (only {} points)", points.len(), points.len()));
        k_max = points.len();
    }
    check_points(points, k_min)?;

    let mut models: Vec<ClusterModel> = Vec::new();
    for k in k_min..=k_max {
        let warm = match models.last() {
            Some(prev) if prev.k + 1 == k => Some(split_from(points, prev, opts)),
            _ => None,
        };
        models.push(canonicalize(best_of(restarts(points, k, seed, opts).chain(warm))));
    }
    let curve: Vec<(usize, f64)> = models.iter().map(|m| (m.k, m.ssd)).collect();
    let k_optimal = match knee_index(&curve) {
        Some(i) => curve[i].0,
        None => {
            warnings.push("curve too short for a knee; using the smallest k".into());
            curve[0].0
        }
    };
    Ok(ElbowResult { k_optimal, curve, models, warnings })
}

/// Interior point with the largest perpendicular distance to the chord
/// between the curve's endpoints. The argmax is unchanged by rescaling
/// either axis, so no normalization is needed.
pub fn knee_index(curve: &[(usize, f64)]) -> Option<usize> {
    if curve.len() < 3 {
        return None;
    }
    let (x0, y0) = (curve[0].0 as f64, curve[0].1);
    let (x1, y1) = (curve[curve.len() - 1].0 as f64, curve[curve.len() - 1].1);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = (1, f64::NEG_INFINITY);
    for (i, &(k, s)) in curve.iter().enumerate().take(curve.len() - 1).skip(1) {
        let d = ((x1 - x0) * (y0 - s) - (x0 - k as f64) * (y1 - y0)).abs() / len;
        if d > best.1 {
            best = (i, d);
        }
    }
    Some(best.0)
}

pub fn assign_cluster(model: &ClusterModel, standardizer: &Standardizer, point: &CapacityVector) -> usize {
    nearest_centroid(&model.centroids, &standardizer.transform(&point.features())).0
}

/// True once the fleet has grown by at least 10% since the fit.
pub fn maybe_recluster(model: &ClusterModel, current_node_count: usize) -> bool {
    current_node_count * 10 >= model.node_count_at_fit * 11
}

/// A fitted clustering together with the scaler it was fitted under.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityClusters {
    pub standardizer: Standardizer,
    pub model: ClusterModel,
}

impl CapacityClusters {
    /// Standardize, run the elbow over `k_range`, keep the chosen k.
    pub fn fit(nodes: &[VecNode], k_range: RangeInclusive<usize>, seed: u64) -> Result<(Self, ElbowResult)> {
        let caps: Vec<CapacityVector> = nodes.iter().map(|n| n.capacity).collect();
        let standardizer = Standardizer::fit_capacities(&caps)?;
        let z = standardizer.transform_all(&capacity_features(&caps));
        let elbow = elbow_select_k(&z, k_range, seed)?;
        let model = elbow.best_model().clone();
        Ok((CapacityClusters { standardizer, model }, elbow))
    }

    pub fn select(&self, point: &CapacityVector) -> usize {
        assign_cluster(&self.model, &self.standardizer, point)
    }

    pub fn k(&self) -> usize {
        self.model.k
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        self.model.members()
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let m = &self.model;
        let mut s = String::from("vecsim-clusters v1\n");
        let _ = writeln!(s, "dim {}", self.standardizer.dim());
        let _ = writeln!(s, "k {}", m.k);
        let _ = writeln!(s, "node_count_at_fit {}", m.node_count_at_fit);
        let _ = writeln!(s, "ssd {}", m.ssd);
        let _ = writeln!(s, "means {}", join(&self.standardizer.means));
        let _ = writeln!(s, "stddevs {}", join(&self.standardizer.stddevs));
        for c in &m.centroids {
            let _ = writeln!(s, "centroid {}", join(c));
        }
        let assigned: Vec<String> = m.assignments.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(s, "assignments {}", assigned.join(" "));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("cluster model: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        if lines.next() != Some("vecsim-clusters v1") {
            return Err(bad("unsupported header".into()));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(format!("expected `{name}`, found `{line}`")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let num = |v: &[String]| -> Result<Vec<f64>> {
            v.iter().map(|s| s.parse::<f64>().map_err(|e| bad(e.to_string()))).collect()
        };
        let int = |v: &[String]| -> Result<usize> {
            v.first().ok_or_else(|| bad("missing value".into()))?.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))
        };
        let dim = int(&field("dim")?)?;
        let k = int(&field("k")?)?;
        let node_count_at_fit = int(&field("node_count_at_fit")?)?;
        let ssd = num(&field("ssd")?)?.first().copied().ok_or_else(|| bad("missing ssd".into()))?;
        let means = num(&field("means")?)?;
        let stddevs = num(&field("stddevs")?)?;
        let centroids = (0..k).map(|_| num(&field("centroid")?)).collect::<Result<Vec<_>>>()?;
        let assignments = field("assignments")?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if means.len() != dim || stddevs.len() != dim || centroids.iter().any(|c| c.len() != dim) {
            return Err(bad("dimension mismatch".into()));
        }
        if assignments.iter().any(|&a| a >= k) {
            return Err(bad("assignment out of range".into()));
        }
        Ok(CapacityClusters {
            standardizer: Standardizer { means, stddevs },
            model: ClusterModel { k, centroids, assignments, ssd, node_count_at_fit, iterations: 0, ssd_history: Vec::new() },
        })
    }
}
