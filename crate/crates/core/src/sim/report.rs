use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_simulation, Outcome, SimConfig, SimInputs, SimReport};
use crate::artifact::{csv_bytes, read_csv, write_atomic, ArtifactHeader};
use crate::error::{Error, Result};
use crate::fleet::{generate_workloads, Workflow, WorkloadConfig};
use crate::scheduler::SchedulerKind;

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_nodes_sampled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    /// Every completed workflow.
    Completed,
    /// Completed workflows that went through at least one failure.
    Recovered,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Completed => "completed",
            Subset::Recovered => "recovered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductivityStats {
    pub subset: Subset,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl SimReport {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.records.iter().filter(|r| r.outcome == outcome).count()
    }

    /// Over workflows that received an initial placement.
    pub fn latency_stats(&self) -> LatencyStats {
        let placed: Vec<_> = self.records.iter().filter(|r| !r.attempts.is_empty()).collect();
        let mut ms: Vec<f64> = placed.iter().map(|r| r.search_latency_s * 1000.0).collect();
        ms.sort_by(f64::total_cmp);
        let sampled: Vec<f64> = placed.iter().map(|r| r.nodes_sampled as f64).collect();
        LatencyStats {
            count: ms.len(),
            mean_ms: mean(&ms),
            median_ms: quantile(&ms, 0.5),
            q1_ms: quantile(&ms, 0.25),
            q3_ms: quantile(&ms, 0.75),
            min_ms: quantile(&ms, 0.0),
            max_ms: quantile(&ms, 1.0),
            mean_nodes_sampled: mean(&sampled),
        }
    }

    pub fn productivity_stats(&self, subset: Subset) -> ProductivityStats {
        let mut v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| subset == Subset::Completed || r.failures() > 0)
            .filter_map(|r| r.productivity_rate)
            .collect();
        v.sort_by(f64::total_cmp);
        ProductivityStats {
            subset,
            count: v.len(),
            mean: mean(&v),
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            min: quantile(&v, 0.0),
            max: quantile(&v, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub scales: Vec<usize>,
    pub schedulers: Vec<SchedulerKind>,
    /// Generator for the per-scale workloads; `count` is overridden per scale.
    pub workload: WorkloadConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig { scales: vec![10, 50, 150, 500], schedulers: SchedulerKind::ALL.to_vec(), workload: WorkloadConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRow {
    pub scale: usize,
    pub scheduler: SchedulerKind,
    pub workflows: usize,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub mean_nodes_sampled: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reports: Vec<SimReport>,
    pub scale_rows: Vec<ScaleRow>,
}

impl Comparison {
    pub fn report(&self, kind: SchedulerKind) -> Option<&SimReport> {
        self.reports.iter().find(|r| r.scheduler == kind)
    }
}

/// Runs every scheduler on `inputs.workloads`, then on generated workloads of
/// each configured scale.
pub fn compare_schedulers(
    inputs: &SimInputs,
    sim: &SimConfig,
    config: &ComparisonConfig,
    seed: u64,
) -> Result<Comparison> {
    let reports = config
        .schedulers
        .iter()
        .map(|&k| run_simulation(inputs, k, sim, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut scale_rows = Vec::new();
    for &scale in &config.scales {
        let wl: Vec<Workflow> = generate_workloads(&WorkloadConfig { count: scale, ..config.workload.clone() }, seed)?;
        let scaled = SimInputs { workloads: &wl, ..*inputs };
        for &kind in &config.schedulers {
            let stats = run_simulation(&scaled, kind, sim, seed)?.latency_stats();
            scale_rows.push(ScaleRow {
                scale,
                scheduler: kind,
                workflows: stats.count,
                mean_latency_ms: stats.mean_ms,
                median_latency_ms: stats.median_ms,
                mean_nodes_sampled: stats.mean_nodes_sampled,
            });
        }
    }
    Ok(Comparison { reports, scale_rows })
}

#[derive(Serialize)]
struct RecordRow {
    workflow_id: u64,
    scheduler: &'static str,
    outcome: &'static str,
    cc_required: bool,
    attempts: usize,
    failures: usize,
    submit_s: f64,
    first_start_s: Option<f64>,
    completion_s: Option<f64>,
    total_execution_s: f64,
    recovery_s: f64,
    productivity_rate: Option<f64>,
    search_latency_ms: f64,
    nodes_sampled: usize,
    initial_candidates: usize,
    predictions: usize,
}

#[derive(Serialize)]
struct InstanceRow {
    scheduler: &'static str,
    instance: usize,
    workflow_id: u64,
    search_latency_ms: f64,
    nodes_sampled: usize,
}

#[derive(Serialize)]
struct ScaleCsvRow {
    scale: usize,
    scheduler: &'static str,
    workflows: usize,
    mean_latency_ms: f64,
    median_latency_ms: f64,
    mean_nodes_sampled: f64,
}

#[derive(Serialize)]
struct ProductivityRow {
    scheduler: &'static str,
    subset: &'static str,
    count: usize,
    mean: f64,
    median: f64,
    q1: f64,
    q3: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct DecisionRow {
    workflow_id: u64,
    scheduler: &'static str,
    cluster: String,
    attempt: u32,
    node_id: Option<usize>,
    nodes_sampled: usize,
    search_latency_ms: f64,
    outcome: &'static str,
    attestation: &'static str,
}

fn record_rows(reports: &[&SimReport]) -> Vec<RecordRow> {
    reports
        .iter()
        .flat_map(|rep| rep.records.iter())
        .map(|r| RecordRow {
            workflow_id: r.workflow_id,
            scheduler: r.scheduler.as_str(),
            outcome: r.outcome.as_str(),
            cc_required: r.cc_required,
            attempts: r.attempts.len(),
            failures: r.failures(),
            submit_s: r.submit_ms as f64 / 1000.0,
            first_start_s: r.attempts.first().map(|a| a.start_ms as f64 / 1000.0),
            completion_s: (r.outcome == Outcome::Completed)
                .then(|| r.attempts.last().map(|a| a.end_ms as f64 / 1000.0))
                .flatten(),
            total_execution_s: r.total_execution_s,
            recovery_s: r.recovery_s,
            productivity_rate: r.productivity_rate,
            search_latency_ms: r.search_latency_s * 1000.0,
            nodes_sampled: r.nodes_sampled,
            initial_candidates: r.initial_candidates,
            predictions: r.predictions,
        })
        .collect()
}

fn instance_rows(reports: &[&SimReport]) -> Vec<InstanceRow> {
    reports
        .iter()
        .flat_map(|rep| rep.records.iter().filter(|r| !r.attempts.is_empty()).enumerate())
        .map(|(instance, r)| InstanceRow {
            scheduler: r.scheduler.as_str(),
            instance,
            workflow_id: r.workflow_id,
            search_latency_ms: r.search_latency_s * 1000.0,
            nodes_sampled: r.nodes_sampled,
        })
        .collect()
}

fn productivity_rows(reports: &[&SimReport]) -> Vec<ProductivityRow> {
    reports
        .iter()
        .flat_map(|rep| [Subset::Completed, Subset::Recovered].map(|s| (rep.scheduler, rep.productivity_stats(s))))
        .map(|(k, p)| ProductivityRow {
            scheduler: k.as_str(),
            subset: p.subset.as_str(),
            count: p.count,
            mean: p.mean,
            median: p.median,
            q1: p.q1,
            q3: p.q3,
            min: p.min,
            max: p.max,
        })
        .collect()
}

fn decision_rows(reports: &[&SimReport]) -> Vec<DecisionRow> {
    let mut rows = Vec::new();
    for rep in reports {
        for r in &rep.records {
            for a in &r.attempts {
                let d = &a.decision;
                let cluster = match (d.cluster_index, d.clusters_drawn.is_empty()) {
                    (Some(c), _) => c.to_string(),
                    (None, false) => d.clusters_drawn.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
                    (None, true) => String::new(),
                };
                rows.push(DecisionRow {
                    workflow_id: r.workflow_id,
                    scheduler: r.scheduler.as_str(),
                    cluster,
                    attempt: d.attempt_number,
                    node_id: Some(a.node_id),
                    nodes_sampled: d.nodes_sampled,
                    search_latency_ms: d.search_latency_s * 1000.0,
                    outcome: a.outcome.as_str(),
                    attestation: match a.attested {
                        None => "not_required",
                        Some(true) => "verified",
                        Some(false) => "rejected",
                    },
                });
            }
            if r.outcome != Outcome::Completed {
                rows.push(DecisionRow {
                    workflow_id: r.workflow_id,
                    scheduler: r.scheduler.as_str(),
                    cluster: String::new(),
                    attempt: r.attempts.len() as u32 + 1,
                    node_id: None,
                    nodes_sampled: 0,
                    search_latency_ms: 0.0,
                    outcome: if r.outcome == Outcome::Rejected { "rejected" } else { "exhausted" },
                    attestation: "not_required",
                });
            }
        }
    }
    rows
}

/// Per-scheduler figures shared by `summary.txt` and the `report` command.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryBlock {
    pub scheduler: String,
    pub workflows: usize,
    pub completed: usize,
    pub failed: usize,
    pub rejected: usize,
    pub mean_search_latency_ms: f64,
    pub mean_nodes_sampled: f64,
    pub mean_productivity_completed: f64,
    pub mean_productivity_recovered: f64,
    pub recovered_workflows: usize,
}

impl SummaryBlock {
    pub fn from_report(rep: &SimReport) -> Self {
        let lat = rep.latency_stats();
        let all = rep.productivity_stats(Subset::Completed);
        let rec = rep.productivity_stats(Subset::Recovered);
        SummaryBlock {
            scheduler: rep.scheduler.to_string(),
            workflows: rep.records.len(),
            completed: rep.count(Outcome::Completed),
            failed: rep.count(Outcome::Failed),
            rejected: rep.count(Outcome::Rejected),
            mean_search_latency_ms: lat.mean_ms,
            mean_nodes_sampled: lat.mean_nodes_sampled,
            mean_productivity_completed: all.mean,
            mean_productivity_recovered: rec.mean,
            recovered_workflows: rec.count,
        }
    }

    fn render(&self, s: &mut String) {
        let _ = writeln!(s, "[{}]", self.scheduler);
        let _ = writeln!(s, "workflows {}", self.workflows);
        let _ = writeln!(s, "completed {}", self.completed);
        let _ = writeln!(s, "failed {}", self.failed);
        let _ = writeln!(s, "rejected {}", self.rejected);
        let _ = writeln!(s, "mean_search_latency_ms {:.6}", self.mean_search_latency_ms);
        let _ = writeln!(s, "mean_nodes_sampled {:.6}", self.mean_nodes_sampled);
        let _ = writeln!(s, "mean_productivity_completed {:.6}", self.mean_productivity_completed);
        let _ = writeln!(s, "mean_productivity_recovered {:.6}", self.mean_productivity_recovered);
        let _ = writeln!(s, "recovered_workflows {}", self.recovered_workflows);
        s.push('\n');
    }
}

pub fn render_summary(header_line: &str, blocks: &[SummaryBlock]) -> String {
    let mut s = header_line.to_string();
    for b in blocks {
        b.render(&mut s);
    }
    s
}

#[derive(Deserialize)]
struct StoredRecord {
    scheduler: String,
    outcome: String,
    failures: usize,
    first_start_s: Option<f64>,
    productivity_rate: Option<f64>,
    search_latency_ms: f64,
    nodes_sampled: usize,
}

/// Rebuilds the summary blocks from a `records.csv`, in first-seen scheduler order.
pub fn summarize_records(path: &Path) -> Result<Vec<SummaryBlock>> {
    let rows: Vec<StoredRecord> = read_csv(path)?;
    let mut order: Vec<String> = Vec::new();
    for r in &rows {
        if !order.contains(&r.scheduler) {
            order.push(r.scheduler.clone());
        }
        if !matches!(r.outcome.as_str(), "completed" | "failed" | "rejected") {
            return Err(Error::parse(path, format!("unknown outcome `{}`", r.outcome)));
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let rs: Vec<&StoredRecord> = rows.iter().filter(|r| r.scheduler == name).collect();
            let placed: Vec<&&StoredRecord> = rs.iter().filter(|r| r.first_start_s.is_some()).collect();
            let prod: Vec<f64> = rs.iter().filter_map(|r| r.productivity_rate).collect();
            let rec: Vec<f64> = rs.iter().filter(|r| r.failures > 0).filter_map(|r| r.productivity_rate).collect();
            let count = |o: &str| rs.iter().filter(|r| r.outcome == o).count();
            SummaryBlock {
                workflows: rs.len(),
                completed: count("completed"),
                failed: count("failed"),
                rejected: count("rejected"),
                mean_search_latency_ms: mean(&placed.iter().map(|r| r.search_latency_ms).collect::<Vec<_>>()),
                mean_nodes_sampled: mean(&placed.iter().map(|r| r.nodes_sampled as f64).collect::<Vec<_>>()),
                mean_productivity_completed: mean(&prod),
                mean_productivity_recovered: mean(&rec),
                recovered_workflows: rec.len(),
                scheduler: name,
            }
        })
        .collect())
}

fn summary_text(header: &ArtifactHeader, reports: &[&SimReport], scales: &[ScaleRow]) -> String {
    let blocks: Vec<SummaryBlock> = reports.iter().map(|r| SummaryBlock::from_report(r)).collect();
    let mut s = render_summary(&header.line(), &blocks);
    if !scales.is_empty() {
        let _ = writeln!(s, "[latency_by_scale]");
        for row in scales {
            let _ = writeln!(s, "{} {} {:.6}", row.scale, row.scheduler, row.mean_latency_ms);
        }
    }
    s
}

fn write_all(dir: &Path, header: &ArtifactHeader, reports: &[&SimReport], scales: Option<&[ScaleRow]>, force: bool) -> Result<()> {
    let path = |name: &str| dir.join(name);
    let mut files = vec![
        ("records.csv", csv_bytes(&path("records.csv"), header, record_rows(reports))?),
        ("latency_by_instance.csv", csv_bytes(&path("latency_by_instance.csv"), header, instance_rows(reports))?),
        ("productivity.csv", csv_bytes(&path("productivity.csv"), header, productivity_rows(reports))?),
        ("decisions.csv", csv_bytes(&path("decisions.csv"), header, decision_rows(reports))?),
        ("summary.txt", summary_text(header, reports, scales.unwrap_or(&[])).into_bytes()),
    ];
    if let Some(scales) = scales {
        let rows = scales.iter().map(|r| ScaleCsvRow {
            scale: r.scale,
            scheduler: r.scheduler.as_str(),
            workflows: r.workflows,
            mean_latency_ms: r.mean_latency_ms,
            median_latency_ms: r.median_latency_ms,
            mean_nodes_sampled: r.mean_nodes_sampled,
        });
        files.push(("latency_by_scale.csv", csv_bytes(&path("latency_by_scale.csv"), header, rows)?));
    }
    if !force {
        if let Some((name, _)) = files.iter().find(|(name, _)| path(name).exists()) {
            return Err(Error::WouldOverwrite(path(name)));
        }
    }
    for (name, bytes) in files {
        write_atomic(&path(name), &bytes, true)?;
    }
    Ok(())
}

pub fn write_single_report(dir: &Path, header: &ArtifactHeader, report: &SimReport, force: bool) -> Result<()> {
    write_all(dir, header, &[report], None, force)
}

pub fn write_comparison(dir: &Path, header: &ArtifactHeader, comparison: &Comparison, force: bool) -> Result<()> {
    let reports: Vec<&SimReport> = comparison.reports.iter().collect();
    write_all(dir, header, &reports, Some(&comparison.scale_rows), force)
}
