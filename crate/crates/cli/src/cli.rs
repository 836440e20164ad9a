//! Argument parsing and dispatch.

use std::path::PathBuf;

use ccma_core::baselines::BaselineKind;
use ccma_core::Execution;
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, EvalSource};
use crate::config::{RunConfig, SweepSpec};
use crate::error::{field, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "ccma",
    version,
    about = "Concentric circular microphone array beamformer design"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize per-band weights and write all artifacts.
    Design(Common),
    /// Recompute metrics and pattern grids from saved parameters or a baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameter file written by `design`.
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        params: Option<PathBuf>,
        /// Baseline beamformer instead of a parameter file.
        #[arg(long, value_parser = parse_baseline)]
        baseline: Option<BaselineKind>,
    },
    /// Run an L3 weight sweep, one design per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// TOML sweep specification.
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Delay-and-sum vs designed metrics, band by band.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Parameter file; a fresh design is run when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Check the loss gradient against central differences.
    Gradcheck {
        /// Use this configuration's array, bands and loss instead of the built-in toy.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optimizer seed (overrides `optimizer.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Angular grid resolution in degrees (overrides `grid_deg`).
    #[arg(long = "grid-deg")]
    pub grid_deg: Option<f64>,
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|e: ccma_core::Error| e.to_string())
}

impl Common {
    /// Loads the config and applies command-line overrides.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.optimizer.seed = seed;
        }
        if let Some(g) = self.grid_deg {
            cfg.grid_deg = g;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match workers {
        None => job(),
        Some(0) => Err(field("--workers", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Validation(format!("--workers: {e}")))?
            .install(job),
    }
}

/// Runs one parsed command; returns a short report for stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    let exec = Execution::default();
    match cli.command {
        Command::Design(common) => {
            let cfg = common.resolve()?;
            let out = with_workers(common.workers, || commands::cmd_design(&cfg, exec))?;
            Ok(format!(
                "design: {} iterations ({:?}), best loss {:.6}, artifacts in {}",
                out.record.iteration_count(),
                out.record.stop_reason,
                out.best_loss,
                cfg.output_dir.display()
            ))
        }
        Command::Eval {
            common,
            params,
            baseline,
        } => {
            let cfg = common.resolve()?;
            let source = match (params, baseline) {
                (Some(p), _) => EvalSource::Params(p),
                (None, Some(b)) => EvalSource::Baseline(b),
                (None, None) => return Err(field("--params", "either --params or --baseline is required")),
            };
            let curves = with_workers(common.workers, || commands::cmd_eval(&cfg, &source, exec))?;
            Ok(format!(
                "eval: {} bands, metrics in {}",
                curves.len(),
                cfg.output_dir.display()
            ))
        }
        Command::Sweep { common, sweep } => {
            let cfg = common.resolve()?;
            let spec = SweepSpec::load(&sweep)?;
            let rows = with_workers(common.workers, || commands::cmd_sweep(&cfg, &spec))?;
            Ok(format!(
                "sweep: {} points, summary in {}",
                rows.len(),
                cfg.output_dir.display()
            ))
        }
        Command::Compare { common, params } => {
            let cfg = common.resolve()?;
            let cmp = with_workers(common.workers, || commands::cmd_compare(&cfg, params.as_deref(), exec))?;
            Ok(format!(
                "compare: {} bands, table in {}",
                cmp.design.len(),
                cfg.output_dir.display()
            ))
        }
        Command::Gradcheck {
            config,
            points,
            seed,
            workers,
        } => {
            let (problem, loss) = match &config {
                None => commands::gradcheck_toy()?,
                Some(path) => {
                    let cfg = RunConfig::load(path)?;
                    (commands::build_problem(&cfg, exec)?, cfg.loss())
                }
            };
            let s = with_workers(workers, || commands::cmd_gradcheck(&problem, &loss, points, seed, exec))?;
            Ok(format!(
                "gradcheck: {} points, {} coordinates compared, {} excluded at branch switches, max relative error {:.3e}",
                s.errors.len(),
                s.compared,
                s.excluded,
                s.max_error()
            ))
        }
    }
}
