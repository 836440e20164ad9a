//! Subcommand implementations. Each writes its artifacts under the resolved
//! output directory and returns the in-memory results.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccma_core::baselines::{baseline_filter, BaselineKind};
use ccma_core::design::{curves_from, DesignProblem, DesignSetup};
use ccma_core::geometry::{build_geometry, ArrayConfig};
use ccma_core::loss::{LossConfig, LossVariant};
use ccma_core::metrics::{population_std, to_db, MetricCurves};
use ccma_core::optimizer::{check_loss_gradient, optimize, DesignOutcome};
use ccma_core::wavefield::{beampattern_grid, Direction};
use ccma_core::weighting::{softplus_inverse, DesignParams, SIGMA_FLOOR};
use ccma_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{apply_point, RunConfig, SweepPoint, SweepSpec, SWEEP_PARAMETERS};
use crate::error::{field, CliError, CliResult};

pub const PARAMS_FILE: &str = "params.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_RECORD_FILE: &str = "run_record.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPARE_FILE: &str = "compare.csv";

pub fn beampattern_file(prefix: &str, frequency: f64) -> String {
    format!("{prefix}beampattern_{frequency}.csv")
}

fn write_with<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn prepare_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn build_problem(cfg: &RunConfig, exec: Execution) -> CliResult<DesignProblem> {
    let geometry = build_geometry(&cfg.array_config())?;
    Ok(DesignProblem::new(geometry, cfg.setup()?, exec)?)
}

pub fn write_manifest(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let text = format!(
        "# Resolved run configuration; `ccma design --config {MANIFEST_FILE}` reruns it.\n{}",
        cfg.to_toml()
    );
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_params(path: &Path) -> CliResult<DesignParams> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_params(params: &DesignParams, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(params).expect("params serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_curves(curves: &MetricCurves, path: &Path) -> CliResult<()> {
    write_with(path, |w| curves.write_csv(w))
}

fn band_index(problem: &DesignProblem, f: f64) -> CliResult<usize> {
    problem
        .frequencies()
        .iter()
        .position(|&g| g == f)
        .ok_or_else(|| field("pattern_frequencies_hz", format!("{f} Hz is not a design band")))
}

fn write_design_patterns(
    cfg: &RunConfig,
    problem: &DesignProblem,
    params: &DesignParams,
    dir: &Path,
    exec: Execution,
) -> CliResult<()> {
    for f in cfg.pattern_frequencies() {
        let b = band_index(problem, f)?;
        let h = problem.filter(&params.bands[b])?;
        let grid = beampattern_grid(problem.geometry(), &h, f, problem.grid(), exec)?;
        write_with(&dir.join(beampattern_file("", f)), |w| grid.write_csv(w))?;
    }
    Ok(())
}

fn write_baseline_patterns(
    cfg: &RunConfig,
    problem: &DesignProblem,
    kind: BaselineKind,
    dir: &Path,
    prefix: &str,
    exec: Execution,
) -> CliResult<()> {
    for f in cfg.pattern_frequencies() {
        let h = baseline_filter(kind, problem.geometry(), f, problem.setup().doa)?;
        let grid = beampattern_grid(problem.geometry(), &h, f, problem.grid(), exec)?;
        write_with(&dir.join(beampattern_file(prefix, f)), |w| grid.write_csv(w))?;
    }
    Ok(())
}

/// Optimizes, then writes params, metrics, run record, pattern grids and manifest.
pub fn cmd_design(cfg: &RunConfig, exec: Execution) -> CliResult<DesignOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let problem = build_problem(cfg, exec)?;
    let outcome = optimize(&problem, &cfg.loss(), &cfg.optimizer(), exec)?;
    write_params(&outcome.params, &dir.join(PARAMS_FILE))?;
    write_curves(&outcome.curves, &dir.join(METRICS_FILE))?;
    write_with(&dir.join(RUN_RECORD_FILE), |w| outcome.record.write_csv(w))?;
    write_design_patterns(cfg, &problem, &outcome.params, dir, exec)?;
    write_manifest(cfg, dir)?;
    Ok(outcome)
}

/// What `eval` scores: saved parameters or a baseline beamformer.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalSource {
    Params(PathBuf),
    Baseline(BaselineKind),
}

pub fn baseline_curves(problem: &DesignProblem, kind: BaselineKind, exec: Execution) -> CliResult<MetricCurves> {
    let rows = ccma_core::exec::map_range(exec, problem.band_count(), |b| {
        let f = problem.frequencies()[b];
        let h = baseline_filter(kind, problem.geometry(), f, problem.setup().doa)?;
        Ok(problem.filter_metrics(b, &h)?.metrics)
    })
    .into_iter()
    .collect::<ccma_core::Result<Vec<_>>>()?;
    Ok(curves_from(problem.frequencies(), rows.into_iter()))
}

/// Recomputes metrics (and pattern grids) without optimizing.
pub fn cmd_eval(cfg: &RunConfig, source: &EvalSource, exec: Execution) -> CliResult<MetricCurves> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let problem = build_problem(cfg, exec)?;
    let curves = match source {
        EvalSource::Params(path) => {
            let params = read_params(path)?;
            let curves = problem.evaluate(&params, exec)?;
            prepare_dir(dir)?;
            write_design_patterns(cfg, &problem, &params, dir, exec)?;
            curves
        }
        EvalSource::Baseline(kind) => {
            let curves = baseline_curves(&problem, *kind, exec)?;
            prepare_dir(dir)?;
            write_baseline_patterns(cfg, &problem, *kind, dir, "", exec)?;
            curves
        }
    };
    write_curves(&curves, &dir.join(METRICS_FILE))?;
    Ok(curves)
}

/// Summary of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub values: SweepPoint,
    pub loss: ccma_core::loss::LossConfig,
    pub best_loss: f64,
    pub iterations: usize,
    pub curves: MetricCurves,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn point_dir(root: &Path, point: usize) -> PathBuf {
    root.join(format!("point_{point:03}"))
}

/// Runs every sweep point as an independent design, in parallel on the
/// current rayon pool; each point optimizes sequentially.
pub fn cmd_sweep(cfg: &RunConfig, spec: &SweepSpec) -> CliResult<Vec<SweepRow>> {
    cfg.validate()?;
    spec.validate()?;
    if cfg.loss.variant != LossVariant::L3 {
        return Err(field("loss.variant", "sweeps vary L3 weights; set variant = \"L3\""));
    }
    let root = cfg.output_dir.clone();
    prepare_dir(&root)?;
    let points = spec.points();
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let mut c = cfg.clone();
            c.loss = apply_point(&cfg.loss, point);
            c.output_dir = point_dir(&root, i);
            let out = cmd_design(&c, Execution::Sequential)?;
            Ok(SweepRow {
                point: i,
                values: point.clone(),
                loss: c.loss(),
                best_loss: out.best_loss,
                iterations: out.record.iteration_count(),
                curves: out.curves,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_with(&root.join(SUMMARY_FILE), |w| {
        writeln!(
            w,
            "point,{},best_loss,iterations,mean_DF_dB,std_DF_dB,mean_WNG_dB,std_WNG_dB,mean_theta_deg,mean_phi_deg",
            SWEEP_PARAMETERS.join(",")
        )?;
        for r in &rows {
            let (df, wng) = (r.curves.df_db(), r.curves.wng_db());
            let theta: Vec<f64> = r.curves.theta.iter().map(|t| t.to_degrees()).collect();
            let phi: Vec<f64> = r.curves.phi.iter().map(|t| t.to_degrees()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{:.9},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.point,
                r.loss.alpha,
                r.loss.lambda1,
                r.loss.lambda2,
                r.loss.lambda3,
                r.best_loss,
                r.iterations,
                mean(&df),
                population_std(&df),
                mean(&wng),
                population_std(&wng),
                mean(&theta),
                mean(&phi)
            )?;
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Per-band metrics of a baseline next to a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: MetricCurves,
    pub design: MetricCurves,
}

/// Compares delay-and-sum against saved parameters, or against a fresh design
/// when no parameter file is given.
pub fn cmd_compare(cfg: &RunConfig, params: Option<&Path>, exec: Execution) -> CliResult<Comparison> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let problem = build_problem(cfg, exec)?;
    let design = match params {
        Some(p) => problem.evaluate(&read_params(p)?, exec)?,
        None => cmd_design(cfg, exec)?.curves,
    };
    let baseline = baseline_curves(&problem, BaselineKind::DelayAndSum, exec)?;
    prepare_dir(dir)?;
    write_baseline_patterns(cfg, &problem, BaselineKind::DelayAndSum, dir, "das_", exec)?;
    write_with(&dir.join(COMPARE_FILE), |w| {
        writeln!(
            w,
            "frequency,das_DF_dB,das_WNG_dB,das_theta_deg,das_phi_deg,design_DF_dB,design_WNG_dB,design_theta_deg,design_phi_deg"
        )?;
        for i in 0..design.len() {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                design.frequencies[i],
                to_db(baseline.df[i]),
                to_db(baseline.wng[i]),
                baseline.theta[i].to_degrees(),
                baseline.phi[i].to_degrees(),
                to_db(design.df[i]),
                to_db(design.wng[i]),
                design.theta[i].to_degrees(),
                design.phi[i].to_degrees()
            )?;
        }
        Ok(())
    })?;
    Ok(Comparison { baseline, design })
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    /// Worst relative error per point.
    pub errors: Vec<f64>,
    pub excluded: usize,
    pub compared: usize,
}

impl GradcheckSummary {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Built-in problem: two rings, three bands, L3 with every term active.
pub fn gradcheck_toy() -> CliResult<(DesignProblem, LossConfig)> {
    let geometry = build_geometry(&ArrayConfig::new(vec![0.05, 0.12], 16_000.0))?;
    let setup = DesignSetup::new(Direction::from_degrees(40.0, 30.0)?, vec![2000.0, 3000.0, 4000.0]);
    let loss = LossConfig {
        variant: LossVariant::L3,
        alpha: 0.5,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: 0.01,
        ..LossConfig::l1(40f64.to_radians(), 40f64.to_radians())
    };
    Ok((DesignProblem::new(geometry, setup, Execution::default())?, loss))
}

/// Random interior points: weight logits in [−1, 1], widths around 0.3–1.3.
pub fn random_interior_point(problem: &DesignProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = problem.ring_count();
    (0..problem.band_count() * 2 * r)
        .map(|k| {
            if k % (2 * r) < r {
                rng.random_range(-1.0..1.0)
            } else {
                softplus_inverse(rng.random_range(0.3..1.3) - SIGMA_FLOOR)
            }
        })
        .collect()
}

/// AD vs central differences of the full design loss.
pub fn cmd_gradcheck(
    problem: &DesignProblem,
    loss: &LossConfig,
    points: usize,
    seed: u64,
    exec: Execution,
) -> CliResult<GradcheckSummary> {
    if points == 0 {
        return Err(field("points", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..points).map(|_| random_interior_point(problem, &mut rng)).collect();
    let mut summary = GradcheckSummary {
        errors: Vec::with_capacity(points),
        excluded: 0,
        compared: 0,
    };
    for x in &xs {
        let check = check_loss_gradient(problem, loss, x, exec)?;
        summary.errors.push(check.max_rel_error);
        summary.excluded += check.excluded.len();
        summary.compared += x.len() - check.excluded.len();
    }
    if !(summary.max_error() < GRADCHECK_TOLERANCE) {
        return Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})",
            summary.max_error()
        )));
    }
    Ok(summary)
}
