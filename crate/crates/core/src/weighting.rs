//! Ring weights, intra-ring Gaussian windows and filter assembly.
//!
//! A band's filter is `h_{r,m} = w_r · s_{r,m} · d_{r,m}(DoA)` scaled to unit
//! response at the DoA. The optimizer works on unconstrained variables:
//! ring weights come from a softmax of `u` (so they lie on the simplex) and
//! window widths from `softplus(v) + SIGMA_FLOOR`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::wavefield::{self, steering_vector, Direction};

/// Lower bound added to every window width.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Ring weights and window widths for one frequency band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub frequency: f64,
    pub ring_weights: Vec<f64>,
    pub window_widths: Vec<f64>,
}

/// Feasible design: one [`BandParams`] per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub bands: Vec<BandParams>,
}

impl BandParams {
    pub fn validate(&self, rings: usize) -> Result<()> {
        if self.ring_weights.len() != rings {
            return Err(Error::DimensionMismatch {
                what: "ring weights vs ring count",
                expected: rings,
                got: self.ring_weights.len(),
            });
        }
        if self.window_widths.len() != rings {
            return Err(Error::DimensionMismatch {
                what: "window widths vs ring count",
                expected: rings,
                got: self.window_widths.len(),
            });
        }
        if self.ring_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("ring weights must lie in [0, 1]"));
        }
        let total: f64 = self.ring_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("ring weights sum to {total}, expected 1")));
        }
        if self.window_widths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("window widths must be positive"));
        }
        Ok(())
    }
}

impl DesignParams {
    pub fn validate(&self, rings: usize) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::invalid("bands: at least one band is required"));
        }
        self.bands.iter().try_for_each(|b| b.validate(rings))
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.frequency).collect()
    }
}

/// Raw (unnormalized) vector distance between the mic's broadside-plane
/// direction and the DoA, measured against the antipodal DoA for mics more
/// than 90° of azimuth away from it.
fn raw_distance(mic_angle: f64, doa: Direction) -> f64 {
    let mic = wavefield::unit_vector(FRAC_PI_2, mic_angle);
    let mut target = doa.unit_vector();
    if wavefield::wrap_pi(mic_angle - doa.azimuth).abs() > FRAC_PI_2 {
        target = [-target[0], -target[1], -target[2]];
    }
    ((mic[0] - target[0]).powi(2) + (mic[1] - target[1]).powi(2) + (mic[2] - target[2]).powi(2)).sqrt()
}

/// Range-normalized angular distances `δ ∈ [0, 1]` for every mic of a ring.
pub fn ring_distances(geometry: &ArrayGeometry, ring: usize, doa: Direction) -> Vec<f64> {
    let raw: Vec<f64> = geometry.rings()[ring]
        .angles
        .iter()
        .map(|&a| raw_distance(a, doa))
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-15) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|d| (d - lo) / span).collect()
}

pub fn angular_distance(geometry: &ArrayGeometry, ring: usize, mic: usize, doa: Direction) -> f64 {
    ring_distances(geometry, ring, doa)[mic]
}

/// Normalized distances for all microphones in flat order.
pub fn all_distances(geometry: &ArrayGeometry, doa: Direction) -> Vec<f64> {
    (0..geometry.ring_count())
        .flat_map(|r| ring_distances(geometry, r, doa))
        .collect()
}

pub fn gaussian_window(delta: f64, sigma: f64) -> f64 {
    (-delta * delta / (2.0 * sigma * sigma)).exp()
}

/// Per-mic window weights `s_{r,m}` in flat order.
pub fn window_weights(geometry: &ArrayGeometry, doa: Direction, widths: &[f64]) -> Vec<f64> {
    all_distances(geometry, doa)
        .iter()
        .enumerate()
        .map(|(i, &d)| gaussian_window(d, widths[geometry.ring_of(i)]))
        .collect()
}

/// Distortionless filter for one band.
pub fn assemble_filter(geometry: &ArrayGeometry, params: &BandParams, doa: Direction) -> Result<Vec<Complex64>> {
    params.validate(geometry.ring_count())?;
    let s = window_weights(geometry, doa, &params.window_widths);
    let d = steering_vector(geometry, params.frequency, doa)?;
    let mut h: Vec<Complex64> = d
        .iter()
        .enumerate()
        .map(|(i, z)| z * (params.ring_weights[geometry.ring_of(i)] * s[i]))
        .collect();
    let gain = wavefield::response(&h, &d);
    if !(gain.norm() > 1e-300) || !gain.is_finite() {
        return Err(Error::DegenerateFilter("all ring/window weights vanish".into()));
    }
    // h^H d = 1 requires h ← h / conj(gain)
    let scale = gain.conj().inv();
    for z in &mut h {
        *z *= scale;
    }
    Ok(h)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y − 1) = y + ln(1 − e^{−y})
    y + (-(-y).exp()).ln_1p()
}

fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Maps unconstrained `(u, v)` of one band to `(w, σ)`.
pub fn constrain(u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (softmax(u), v.iter().map(|&x| softplus(x) + SIGMA_FLOOR).collect())
}

/// Inverse of [`constrain`]; `u` is centered to zero mean.
pub fn unconstrain(w: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if w.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::invalid("ring weights must be strictly positive to unconstrain"));
    }
    if sigma.iter().any(|s| !(*s > SIGMA_FLOOR)) {
        return Err(Error::invalid("window widths must exceed the floor to unconstrain"));
    }
    let logs: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok((
        logs.iter().map(|l| l - mean).collect(),
        sigma.iter().map(|&s| softplus_inverse(s - SIGMA_FLOOR)).collect(),
    ))
}

/// Tape version of [`constrain`].
pub fn constrain_vars<'t>(tape: &'t Tape, u: &[Var<'t>], v: &[Var<'t>]) -> (Vec<Var<'t>>, Vec<Var<'t>>) {
    let m = u.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Var<'t>> = u.iter().map(|&x| (x - m).exp()).collect();
    let z = tape.sum(&e);
    let w = e.iter().map(|&x| x / z).collect();
    let sigma = v.iter().map(|&x| softplus_var(x) + SIGMA_FLOOR).collect();
    (w, sigma)
}

fn softplus_var(x: Var<'_>) -> Var<'_> {
    // ln(1 + e^x) written as max(x, 0) + ln(1 + e^{−|x|}) keeps large |x| finite
    let value = x.value();
    if value > 0.0 {
        x + ((-x).exp() + 1.0).ln().expect("1 + e^-x > 0")
    } else {
        (x.exp() + 1.0).ln().expect("1 + e^x > 0")
    }
}
