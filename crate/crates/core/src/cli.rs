//! `vecsim` command line: generate, train, simulate, compare, report.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::artifact::{csv_bytes, write_atomic, ArtifactHeader};
use crate::clustering::{maybe_recluster, CapacityClusters};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fleet::{
    generate_fleet, generate_traces, generate_workloads, read_fleet_csv, read_traces_csv, read_workload_csv,
    AvailabilityTrace, VecNode, Workflow,
};
use crate::forecast::{train_on_traces, write_loss_curve, ForecastModel, Forecaster, ProfileForecaster, RnnForecaster};
use crate::scheduler::SchedulerKind;
use crate::sim::{
    compare_schedulers, render_summary, run_simulation, summarize_records, write_comparison, write_single_report,
    SimInputs, SummaryBlock,
};

#[derive(Debug, Parser)]
#[command(name = "vecsim", version, about = "Volunteer edge-cloud scheduling simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate fleet.csv, traces.csv and workload.csv.
    Gen(Common),
    /// Fit capacity clusters and train the availability forecaster.
    Train(Common),
    /// Run one scheduler over the generated workload.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheduler: SchedulerKind,
    },
    /// Run every configured scheduler plus the latency scale sweep.
    Compare(Common),
    /// Recompute the summary from an existing records.csv.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `run.out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding inputs from earlier stages; defaults to the output directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    data: PathBuf,
    header: ArtifactHeader,
    force: bool,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .ok_or_else(|| Error::Config("no output directory (set run.out or pass --out)".into()))?;
        let data = common.data.clone().unwrap_or_else(|| out.clone());
        let header = ArtifactHeader::new(cfg.digest(), cfg.seed);
        Ok(Context { cfg, out, data, header, force: common.force })
    }

    /// Fails before anything is written if one of `names` already exists.
    fn check_outputs(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match names.iter().map(|n| self.out.join(n)).find(|p| p.exists()) {
            Some(p) => Err(Error::WouldOverwrite(p)),
            None => Ok(()),
        }
    }

    fn fleet(&self) -> Result<Vec<VecNode>> {
        read_fleet_csv(&self.data.join("fleet.csv"), &self.cfg.fleet)
    }

    fn traces(&self) -> Result<Vec<AvailabilityTrace>> {
        read_traces_csv(&self.data.join("traces.csv"), self.cfg.fleet.start_epoch)
    }

    fn workloads(&self) -> Result<Vec<Workflow>> {
        read_workload_csv(&self.data.join("workload.csv"))
    }

    fn clusters(&self, fleet: &[VecNode]) -> Result<CapacityClusters> {
        let path = self.data.join("clusters.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut clusters = CapacityClusters::from_text(&text)?;
        let fitted = clusters.model.assignments.len();
        if fleet.len() < fitted {
            return Err(Error::Data(format!("cluster model covers {fitted} nodes but the fleet has {}", fleet.len())));
        }
        if maybe_recluster(&clusters.model, fleet.len()) {
            eprintln!("fleet grew from {fitted} to {} nodes; refitting clusters", fleet.len());
            clusters = CapacityClusters::fit(fleet, self.cfg.k_min..=self.cfg.k_max, self.cfg.seed)?.0;
        } else {
            for node in &fleet[fitted..] {
                let c = clusters.select(&node.capacity);
                clusters.model.assignments.push(c);
            }
        }
        Ok(clusters)
    }

    fn forecaster(&self, fleet: &[VecNode]) -> Result<Box<dyn Forecaster>> {
        if self.cfg.forecaster == "profile" {
            return Ok(Box::new(ProfileForecaster::new(fleet)));
        }
        let model = ForecastModel::load(&self.data.join("model.rnn"))?;
        if model.encoder.num_nodes != fleet.len() {
            return Err(Error::Data(format!(
                "forecaster was trained on {} nodes but the fleet has {}",
                model.encoder.num_nodes,
                fleet.len()
            )));
        }
        let mut f = RnnForecaster::new(model);
        f.window_min = self.cfg.window_min;
        Ok(Box::new(f))
    }
}

#[derive(Serialize)]
struct ElbowRow {
    k: usize,
    ssd: f64,
    selected: bool,
}

fn gen(ctx: &Context) -> Result<()> {
    ctx.check_outputs(&["fleet.csv", "traces.csv", "workload.csv"])?;
    let c = &ctx.cfg;
    let fleet = generate_fleet(&c.fleet, c.seed)?;
    let traces = generate_traces(&fleet, c.fleet.start_epoch, c.fleet.horizon_hours, c.seed)?;
    let workloads = generate_workloads(&c.workload, c.seed)?;
    crate::fleet::write_fleet_csv(&ctx.out.join("fleet.csv"), &ctx.header, &fleet, true)?;
    crate::fleet::write_traces_csv(&ctx.out.join("traces.csv"), &ctx.header, &traces, true)?;
    crate::fleet::write_workload_csv(&ctx.out.join("workload.csv"), &ctx.header, &workloads, true)?;
    eprintln!("generated {} nodes, {} h of traces, {} workflows in {}", fleet.len(), c.fleet.horizon_hours, workloads.len(), ctx.out.display());
    Ok(())
}

fn train(ctx: &Context) -> Result<()> {
    ctx.check_outputs(&["clusters.txt", "elbow.csv", "model.rnn", "loss_curve.csv"])?;
    let fleet = ctx.fleet()?;
    let traces = ctx.traces()?;
    if traces.len() != fleet.len() {
        return Err(Error::Data(format!("{} traces for {} nodes", traces.len(), fleet.len())));
    }
    let (clusters, elbow) = CapacityClusters::fit(&fleet, ctx.cfg.k_min..=ctx.cfg.k_max, ctx.cfg.seed)?;
    for w in &elbow.warnings {
        eprintln!("warning: {w}");
    }
    let elbow_path = ctx.out.join("elbow.csv");
    let rows = elbow.curve.iter().map(|&(k, ssd)| ElbowRow { k, ssd, selected: k == elbow.k_optimal });
    let elbow_csv = csv_bytes(&elbow_path, &ctx.header, rows)?;
    let mut cluster_text = ctx.header.line();
    cluster_text.push_str(&clusters.to_text());
    eprintln!("selected k = {} over {}..={}", elbow.k_optimal, ctx.cfg.k_min, ctx.cfg.k_max);

    let (model, curve) = train_on_traces(&traces, &ctx.cfg.train)?;
    if let Some(acc) = curve.iter().rev().find_map(|p| p.holdout_accuracy) {
        eprintln!("holdout accuracy after {} epochs: {acc:.4}", curve.len());
    }
    write_atomic(&ctx.out.join("clusters.txt"), cluster_text.as_bytes(), true)?;
    write_atomic(&elbow_path, &elbow_csv, true)?;
    model.save(&ctx.out.join("model.rnn"), &ctx.header, true)?;
    write_loss_curve(&ctx.out.join("loss_curve.csv"), &ctx.header, &curve, true)
}

fn simulate(ctx: &Context, kind: Option<SchedulerKind>) -> Result<()> {
    let fleet = ctx.fleet()?;
    let traces = ctx.traces()?;
    let workloads = ctx.workloads()?;
    let clusters = ctx.clusters(&fleet)?;
    let forecaster = ctx.forecaster(&fleet)?;
    let inputs = SimInputs {
        fleet: &fleet,
        traces: &traces,
        workloads: &workloads,
        clusters: &clusters,
        forecaster: forecaster.as_ref(),
    };
    let blocks: Vec<SummaryBlock> = match kind {
        Some(kind) => {
            let report = run_simulation(&inputs, kind, &ctx.cfg.sim, ctx.cfg.seed)?;
            write_single_report(&ctx.out, &ctx.header, &report, ctx.force)?;
            vec![SummaryBlock::from_report(&report)]
        }
        None => {
            let cmp = compare_schedulers(&inputs, &ctx.cfg.sim, &ctx.cfg.comparison(), ctx.cfg.seed)?;
            write_comparison(&ctx.out, &ctx.header, &cmp, ctx.force)?;
            cmp.reports.iter().map(SummaryBlock::from_report).collect()
        }
    };
    print!("{}", render_summary("", &blocks));
    Ok(())
}

fn report(ctx: &Context) -> Result<()> {
    let blocks = summarize_records(&ctx.data.join("records.csv"))?;
    print!("{}", render_summary(&ctx.header.line(), &blocks));
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(c) => gen(&Context::new(c)?),
        Command::Train(c) => train(&Context::new(c)?),
        Command::Simulate { common, scheduler } => simulate(&Context::new(common)?, Some(*scheduler)),
        Command::Compare(c) => simulate(&Context::new(c)?, None),
        Command::Report(c) => report(&Context::new(c)?),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
