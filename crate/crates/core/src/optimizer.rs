//! RProp (iRprop⁻) over the unconstrained design variables.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::design::DesignProblem;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::{total_loss, BandLossTerms, BandMetricVars, BandMetrics, LossConfig};
use crate::metrics::{to_db, MetricCurves};
use crate::weighting::{constrain, softplus_inverse, BandParams, DesignParams, SIGMA_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RPropConfig {
    pub initial_step: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for RPropConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            eta_plus: 1.2,
            eta_minus: 0.5,
            step_min: 1e-6,
            step_max: 50.0,
        }
    }
}

impl RPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_plus > 1.0 && self.eta_minus > 0.0 && self.eta_minus < 1.0) {
            return Err(Error::invalid("rprop: need eta_plus > 1 > eta_minus > 0"));
        }
        if !(self.step_min > 0.0 && self.step_min <= self.step_max) {
            return Err(Error::invalid("rprop: need 0 < step_min <= step_max"));
        }
        if !(self.step_min..=self.step_max).contains(&self.initial_step) {
            return Err(Error::invalid("rprop: initial step outside [step_min, step_max]"));
        }
        Ok(())
    }
}

/// Per-coordinate step sizes and last gradient signs.
#[derive(Debug, Clone, PartialEq)]
pub struct RPropState {
    pub config: RPropConfig,
    pub steps: Vec<f64>,
    pub prev_sign: Vec<i8>,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

impl RPropState {
    pub fn new(len: usize, config: RPropConfig) -> Self {
        Self {
            config,
            steps: vec![config.initial_step; len],
            prev_sign: vec![0; len],
        }
    }

    /// One iRprop⁻ update. On a sign flip the step shrinks, the coordinate is
    /// left alone this round and its stored sign is cleared.
    pub fn step(&mut self, grad: &[f64], params: &mut [f64]) -> Result<()> {
        if grad.len() != self.steps.len() || params.len() != self.steps.len() {
            return Err(Error::DimensionMismatch {
                what: "rprop state vs gradient/params",
                expected: self.steps.len(),
                got: grad.len().min(params.len()),
            });
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient coordinate {k} is {}", grad[k])));
        }
        let c = self.config;
        for k in 0..grad.len() {
            let s = sign(grad[k]);
            match s * self.prev_sign[k] {
                1 => {
                    self.steps[k] = (self.steps[k] * c.eta_plus).min(c.step_max);
                    params[k] -= s as f64 * self.steps[k];
                    self.prev_sign[k] = s;
                }
                -1 => {
                    self.steps[k] = (self.steps[k] * c.eta_minus).max(c.step_min);
                    self.prev_sign[k] = 0;
                }
                _ => {
                    params[k] -= s as f64 * self.steps[k];
                    self.prev_sign[k] = s;
                }
            }
        }
        Ok(())
    }
}

pub fn rprop_step(state: &mut RPropState, grad: &[f64], params: &mut [f64]) -> Result<()> {
    state.step(grad, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Stop after this many iterations without a best-loss improvement.
    pub patience: usize,
    pub min_improvement: f64,
    pub initial_sigma: f64,
    pub init_noise: f64,
    pub rprop: RPropConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            seed: 0,
            patience: 200,
            min_improvement: 1e-6,
            initial_sigma: 0.5,
            init_noise: 1e-3,
            rprop: RPropConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Budget,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub best_loss: f64,
    pub bands: Vec<BandMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub frequencies: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

impl RunRecord {
    pub fn iteration_count(&self) -> usize {
        self.iterations.len()
    }

    pub fn best_series(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.best_loss).collect()
    }

    /// Long format, one row per (iteration, band).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,best_loss,frequency,theta_deg,phi_deg,DF_dB,WNG_dB")?;
        for it in &self.iterations {
            for (f, m) in self.frequencies.iter().zip(&it.bands) {
                writeln!(
                    w,
                    "{},{:.9},{:.9},{},{:.6},{:.6},{:.6},{:.6}",
                    it.iteration,
                    it.loss,
                    it.best_loss,
                    f,
                    m.theta.to_degrees(),
                    m.phi.to_degrees(),
                    to_db(m.df),
                    to_db(m.wng)
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub params: DesignParams,
    pub curves: MetricCurves,
    pub record: RunRecord,
    pub best_loss: f64,
}

/// Seeded starting point: uniform ring weights and widths near `initial_sigma`.
pub fn initial_variables(problem: &DesignProblem, cfg: &OptimizeConfig) -> Result<Vec<f64>> {
    if !(cfg.initial_sigma > SIGMA_FLOOR) {
        return Err(Error::invalid("initial_sigma must exceed the width floor"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = problem.ring_count();
    let v0 = softplus_inverse(cfg.initial_sigma - SIGMA_FLOOR);
    let mut x = Vec::with_capacity(problem.band_count() * 2 * r);
    let noise = |rng: &mut ChaCha8Rng| {
        if cfg.init_noise > 0.0 {
            rng.random_range(-cfg.init_noise..cfg.init_noise)
        } else {
            0.0
        }
    };
    for _ in 0..problem.band_count() {
        for _ in 0..r {
            x.push(noise(&mut rng));
        }
        for _ in 0..r {
            x.push(v0 + noise(&mut rng));
        }
    }
    Ok(x)
}

/// Feasible parameters from band-major unconstrained variables.
pub fn params_from_variables(problem: &DesignProblem, x: &[f64]) -> DesignParams {
    let r = problem.ring_count();
    DesignParams {
        bands: problem
            .frequencies()
            .iter()
            .enumerate()
            .map(|(b, &f)| {
                let chunk = &x[b * 2 * r..(b + 1) * 2 * r];
                let (w, s) = constrain(&chunk[..r], &chunk[r..]);
                BandParams {
                    frequency: f,
                    ring_weights: w,
                    window_widths: s,
                }
            })
            .collect(),
    }
}

/// Loss and gradient at one point of the unconstrained variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub bands: Vec<BandMetrics>,
    pub terms: BandLossTerms,
    /// Every branch decision on the band tapes and the loss tape, in order.
    pub branch_log: Vec<u64>,
}

pub fn loss_and_gradient(
    problem: &DesignProblem,
    loss: &LossConfig,
    x: &[f64],
    exec: Execution,
) -> Result<LossEvaluation> {
    let evals = problem.eval_all(x, exec)?;
    let tape = Tape::new();
    let leaves: Vec<BandMetricVars<'_>> = evals
        .iter()
        .map(|e| BandMetricVars::leaves(&tape, &e.metrics))
        .collect();
    let (root, terms) = total_loss(&tape, &leaves, loss)?;
    let adj = tape.backward(root)?;
    let per = problem.vars_per_band();
    let mut gradient = vec![0.0; x.len()];
    for (b, (e, l)) in evals.iter().zip(&leaves).enumerate() {
        let seeds = [adj.wrt(l.theta), adj.wrt(l.phi), adj.wrt(l.df), adj.wrt(l.wng)];
        for (row, s) in seeds.iter().enumerate() {
            if *s == 0.0 {
                continue;
            }
            for k in 0..per {
                gradient[b * per + k] += s * e.jacobian[row][k];
            }
        }
    }
    let mut branch_log: Vec<u64> = evals.iter().flat_map(|e| e.branches.iter().copied()).collect();
    branch_log.extend(tape.branches());
    Ok(LossEvaluation {
        value: root.value(),
        gradient,
        bands: evals.iter().map(|e| e.metrics).collect(),
        terms,
        branch_log,
    })
}

/// Central-difference check of [`loss_and_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradientCheck {
    pub gradient: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `|AD − FD| / max(1, |FD|)` over compared coordinates.
    pub max_rel_error: f64,
    /// Coordinates whose probes switched a loss branch.
    pub excluded: Vec<usize>,
}

pub fn check_loss_gradient(
    problem: &DesignProblem,
    loss: &LossConfig,
    x: &[f64],
    exec: Execution,
) -> Result<LossGradientCheck> {
    let base = loss_and_gradient(problem, loss, x, exec)?;
    let gradient = base.gradient;
    let mut fd = vec![0.0; x.len()];
    let mut excluded = Vec::new();
    let mut max_rel_error = 0.0f64;
    for k in 0..x.len() {
        let h = 1e-5 * x[k].abs().max(1.0);
        let mut probe = x.to_vec();
        probe[k] = x[k] + h;
        let plus = loss_and_gradient(problem, loss, &probe, exec)?;
        probe[k] = x[k] - h;
        let minus = loss_and_gradient(problem, loss, &probe, exec)?;
        fd[k] = (plus.value - minus.value) / (2.0 * h);
        if plus.branch_log != base.branch_log || minus.branch_log != base.branch_log {
            excluded.push(k);
            continue;
        }
        max_rel_error = max_rel_error.max((gradient[k] - fd[k]).abs() / fd[k].abs().max(1.0));
    }
    Ok(LossGradientCheck {
        gradient,
        finite_difference: fd,
        max_rel_error,
        excluded,
    })
}

/// Joint RProp optimization of every band; returns the best-so-far design.
pub fn optimize(
    problem: &DesignProblem,
    loss: &LossConfig,
    cfg: &OptimizeConfig,
    exec: Execution,
) -> Result<DesignOutcome> {
    loss.validate()?;
    cfg.rprop.validate()?;
    if cfg.iterations == 0 {
        return Err(Error::invalid("iteration budget must be at least 1"));
    }
    let mut x = initial_variables(problem, cfg)?;
    let mut state = RPropState::new(x.len(), cfg.rprop);
    let mut best = f64::INFINITY;
    let mut best_x = x.clone();
    let mut stall = 0usize;
    let mut iterations = Vec::new();
    let mut stop_reason = StopReason::Budget;

    for it in 0..cfg.iterations {
        let LossEvaluation {
            value,
            gradient: grad,
            bands,
            ..
        } = loss_and_gradient(problem, loss, &x, exec)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {it}")));
        }
        if value < best - cfg.min_improvement {
            stall = 0;
        } else {
            stall += 1;
        }
        if value < best {
            best = value;
            best_x.copy_from_slice(&x);
        }
        iterations.push(IterationRecord {
            iteration: it,
            loss: value,
            best_loss: best,
            bands,
        });
        if stall >= cfg.patience {
            stop_reason = StopReason::Stalled;
            break;
        }
        if it + 1 < cfg.iterations {
            state.step(&grad, &mut x)?;
        }
    }

    let params = params_from_variables(problem, &best_x);
    let curves = problem.evaluate(&params, exec)?;
    Ok(DesignOutcome {
        params,
        curves,
        record: RunRecord {
            frequencies: problem.frequencies().to_vec(),
            iterations,
            stop_reason,
        },
        best_loss: best,
    })
}
