//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mglc_core::dynamics::{Benchmark, ControllerParams};
use mglc_core::guidance::ParamUpdate;
use mglc_core::lyapunov::{Dataset, Family};
use mglc_core::verify::Method;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::export::{self, VerifyReport};
use crate::format::{checkpoint, dataset, trace};
use crate::{parallel, pipeline, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mglc", version, about = "Diffusion-guided synthesis of stabilizing controllers")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the (vector field, Lyapunov function) training set.
    GenDataset(GenDatasetArgs),
    /// Train the denoiser on a dataset.
    Train(TrainArgs),
    /// Derive a controller for a benchmark plant.
    Synthesize(SynthesizeArgs),
    /// Roll out a controller from random initial conditions.
    Verify(VerifyArgs),
    /// Write per-step field frames of a synthesis trace.
    ExportTrace(ExportTraceArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid points per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden width of a fresh denoiser.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpdateArg {
    Gradient,
    GaussNewton,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub system: Benchmark,
    /// Receives `controller.json`, `trace.mglctr` and `summary.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reverse steps (defaults to the schedule's sampling steps).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, value_enum)]
    pub update: Option<UpdateArg>,
    /// Do not clip the Tweedie estimate to the data range.
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Auto,
    Rk45,
    EulerMaruyama,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub system: Benchmark,
    /// Controller JSON written by `synthesize`.
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    pub controller: Option<PathBuf>,
    /// Use the reference controller for the system.
    #[arg(long)]
    pub fixture: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Euler–Maruyama step.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportTraceArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Controller file exchanged between `synthesize` and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub system: Benchmark,
    pub psi: [f64; 2],
    pub gain: f64,
}

impl ControllerFile {
    pub fn params(&self) -> ControllerParams {
        ControllerParams::new(self.psi, self.gain)
    }
}

#[derive(Debug, Serialize)]
struct SynthesisSummary<'a> {
    system: Benchmark,
    psi: [f64; 2],
    gain: f64,
    best_restart: usize,
    fraction: f64,
    margin: f64,
    wall_clock_seconds: f64,
    restarts: &'a [pipeline::RestartSummary],
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    let threads = cfg.threads;
    parallel::with_threads(threads, move || match cli.command {
        Command::GenDataset(a) => gen_dataset(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Synthesize(a) => synthesize(cfg, a),
        Command::Verify(a) => verify(cfg, a),
        Command::ExportTrace(a) => export_trace(a),
    })?
}

fn gen_dataset(mut cfg: RunConfig, a: GenDatasetArgs) -> Result<()> {
    let d = &mut cfg.dataset;
    d.n1 = a.n1.unwrap_or(d.n1);
    d.n2 = a.n2.unwrap_or(d.n2);
    d.seed = a.seed.unwrap_or(d.seed);
    if let Some(g) = a.resolution {
        d.grid.resolution = g;
    }
    d.grid.validate()?;
    let ds = parallel::build_dataset(d)?;
    dataset::save(&a.out, &ds)?;
    print!("{}", dataset_summary(&ds));
    Ok(())
}

/// Counts and certificate statistics, one item per line.
pub fn dataset_summary(ds: &Dataset) -> String {
    let r0 = ds.config.lyapunov.exclusion_radius;
    let mut out = String::new();
    let f1: Vec<_> = ds.records.iter().filter(|r| r.family() == Family::Perturbed).collect();
    let f2: Vec<_> = ds.records.iter().filter(|r| r.family() == Family::SecondOrder).collect();
    out.push_str(&format!("records: {}\n", ds.records.len()));
    if !f1.is_empty() {
        let passed = f1.iter().filter(|r| r.certificate(r0).passes(ds.config.lyapunov.pass_fraction)).count();
        out.push_str(&format!("family 1: {} records, certificate pass {passed}/{}\n", f1.len(), f1.len()));
        if let Some(rate) = ds.acceptance_rate() {
            out.push_str(&format!("family 1 acceptance rate: {rate:.3}\n"));
        }
    }
    if !f2.is_empty() {
        let worst = f2
            .iter()
            .filter_map(|r| r.second_order_residuals())
            .fold((0.0f64, f64::NEG_INFINITY), |(i, b), (ri, rb)| (i.max(ri), b.max(rb)));
        out.push_str(&format!(
            "family 2: {} records, max identity residual {:.3e}, max bound excess {:.3e}\n",
            f2.len(),
            worst.0,
            worst.1
        ));
    }
    out.push_str(&format!("codec scales: {:?}\n", ds.codec.scales));
    out
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.seed = a.seed.unwrap_or(t.seed);
    cfg.denoiser.hidden = a.hidden.unwrap_or(cfg.denoiser.hidden);
    let ds = dataset::load(&a.dataset)?;
    let mut ck = match &a.resume {
        Some(path) => checkpoint::load(path)?,
        None => pipeline::init_checkpoint(&ds, cfg.schedule, cfg.denoiser, cfg.train.seed)?,
    };
    let before = pipeline::evaluation_loss(&ck, &ds)?;
    pipeline::train(&mut ck, &ds, &cfg.train)?;
    let after = pipeline::evaluation_loss(&ck, &ds)?;
    checkpoint::save(&a.out, &ck)?;
    let csv = a.loss_csv.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_loss_csv(&csv, &ck.meta.loss_history)?;
    println!("steps: {}", ck.meta.steps);
    println!("evaluation loss: {before:.6} -> {after:.6} (ratio {:.3})", after / before);
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut text = String::from("step,loss\n");
    for (k, l) in history.iter().enumerate() {
        text.push_str(&format!("{k},{l}\n"));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synthesize(mut cfg: RunConfig, a: SynthesizeArgs) -> Result<()> {
    let s = &mut cfg.synthesis;
    s.seed = a.seed.unwrap_or(s.seed);
    s.steps = a.steps.or(s.steps);
    s.restarts = a.restarts.unwrap_or(s.restarts);
    match a.update {
        Some(UpdateArg::Gradient) => s.update = ParamUpdate::Gradient,
        Some(UpdateArg::GaussNewton) if !matches!(s.update, ParamUpdate::GaussNewton { .. }) => {
            s.update = ParamUpdate::GaussNewton { damping: 1e-6 }
        }
        _ => {}
    }
    if a.no_clip {
        s.clip = None;
    }
    let ck = checkpoint::load(&a.checkpoint)?;
    let out = pipeline::synthesize_best(a.system, &ck, &cfg.synthesis, &cfg.verify)?;
    let p = out.controller();
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    export::write_json(
        &a.out_dir.join("controller.json"),
        &ControllerFile { system: a.system, psi: p.psi, gain: p.gain },
    )?;
    trace::save(&a.out_dir.join("trace.mglctr"), &out.trace)?;
    export::write_json(
        &a.out_dir.join("summary.json"),
        &SynthesisSummary {
            system: a.system,
            psi: p.psi,
            gain: p.gain,
            best_restart: out.best,
            fraction: out.report.fraction,
            margin: out.report.margin(),
            wall_clock_seconds: out.seconds,
            restarts: &out.restarts,
        },
    )?;
    println!("psi: [{}, {}]", p.psi[0], p.psi[1]);
    println!("restart {} of {}: convergence fraction {}", out.best, cfg.synthesis.restarts, out.report.fraction);
    println!("wall clock: {:.2} s", out.seconds);
    Ok(())
}

fn verify(mut cfg: RunConfig, a: VerifyArgs) -> Result<()> {
    let v = &mut cfg.verify;
    v.seed = a.seed.unwrap_or(v.seed);
    v.count = a.count.unwrap_or(v.count);
    v.dt = a.dt.unwrap_or(v.dt);
    if let Some(m) = a.method {
        v.method = match m {
            MethodArg::Auto => Method::Auto,
            MethodArg::Rk45 => Method::Rk45,
            MethodArg::EulerMaruyama => Method::EulerMaruyama,
        };
    }
    v.validate()?;
    let p = match &a.controller {
        Some(path) => {
            let file: ControllerFile = export::read_json(path)?;
            if file.system != a.system {
                log::warn!("controller was synthesized for {} but is verified on {}", file.system, a.system);
            }
            file.params()
        }
        None => a.system.reported_controller(),
    };
    let report = pipeline::verify(a.system, &p, &cfg.verify)?;
    let summary = VerifyReport::new(a.system.name(), p, &report);
    let path = export::write_verify_outputs(&a.out_dir, &summary, &report)?;
    println!(
        "{}: {}/{} converged (fraction {}), margin {:.4}, report {}",
        a.system,
        report.converged,
        report.outcomes.len(),
        report.fraction,
        report.margin(),
        path.display()
    );
    Ok(())
}

fn export_trace(a: ExportTraceArgs) -> Result<()> {
    let tr = trace::load(&a.trace)?;
    let frames = export::export_trace(&tr, &a.out_dir)?;
    println!("{frames} frames per channel written to {}", a.out_dir.display());
    Ok(())
}
