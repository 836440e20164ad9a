//! Directivity, white-noise gain, diffuse-noise coherence and mainlobe width.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::wavefield::response;

/// The DF denominator `h^H Γ h` is floored at this fraction of `h^H h`.
/// Only filters with WNG/DF below it are affected.
pub const DF_DENOMINATOR_FLOOR: f64 = 1e-10;

/// Level drop used by the optimizer's beamwidth.
pub const DEFAULT_LEVEL_DROP_DB: f64 = 6.0;

/// Level drop at which the amplitude response halves (≈ 6.02 dB).
pub fn half_amplitude_drop_db() -> f64 {
    20.0 * 2f64.log10()
}

/// Unnormalized sinc, `sin(x)/x` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Spherically isotropic noise coherence `Γ_ij = sinc(2πf l_ij / c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    pub frequency: f64,
    pub size: usize,
    /// Row-major `size × size`.
    pub values: Vec<f64>,
}

impl CoherenceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

pub fn gamma_matrix(geometry: &ArrayGeometry, frequency: f64) -> Result<CoherenceMatrix> {
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::invalid(format!("frequency must be positive, got {frequency}")));
    }
    let k = 2.0 * PI * frequency / geometry.sound_speed();
    Ok(CoherenceMatrix {
        frequency,
        size: geometry.total_mics(),
        values: geometry.distances().iter().map(|&l| sinc(k * l)).collect(),
    })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

/// `|h^H d|² / max(h^H Γ h, ε h^H h)`.
pub fn directivity_factor(h: &[Complex64], d_doa: &[Complex64], gamma: &CoherenceMatrix) -> Result<f64> {
    check_len("filter vs steering vector", d_doa.len(), h.len())?;
    check_len("filter vs coherence matrix", gamma.size, h.len())?;
    let n = h.len();
    let mut denom = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let row = &gamma.values[i * n..(i + 1) * n];
        let acc: Complex64 = row.iter().zip(h).map(|(g, hj)| hj * *g).sum();
        denom += h[i].conj() * acc;
    }
    let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let q = denom.re.max(DF_DENOMINATOR_FLOOR * energy);
    if !(q > 0.0) {
        return Err(Error::NonFinite(format!("non-positive DF denominator {}", denom.re)));
    }
    Ok(response(h, d_doa).norm_sqr() / q)
}

/// `|h^H d|² / (h^H h)`.
pub fn white_noise_gain(h: &[Complex64], d_doa: &[Complex64]) -> Result<f64> {
    check_len("filter vs steering vector", d_doa.len(), h.len())?;
    let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::DegenerateFilter("zero filter".into()));
    }
    Ok(response(h, d_doa).norm_sqr() / energy)
}

/// Mainlobe width from a beampattern cut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beamwidth {
    /// Radians.
    pub width: f64,
    /// False when the estimate is a fallback (non-concave fit or no crossing).
    pub valid: bool,
}

/// Super-Gaussian mask `exp(−½ (x/σ)⁴)`.
pub fn super_gaussian(offset: f64, sigma: f64) -> f64 {
    (-0.5 * (offset / sigma).powi(4)).exp()
}

/// Coefficients `c_i` with curvature `a = Σ c_i B_i` of the masked weighted
/// least-squares fit `B ≈ a x² + b`.
pub fn parabola_coefficients(offsets: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("mask width must be positive"));
    }
    let w: Vec<f64> = offsets.iter().map(|&x| super_gaussian(x, sigma)).collect();
    let total: f64 = w.iter().sum();
    let s2: f64 = w.iter().zip(offsets).map(|(w, x)| w * x * x).sum();
    let s4: f64 = w.iter().zip(offsets).map(|(w, x)| w * x.powi(4)).sum();
    let den = total * s4 - s2 * s2;
    if !(den > 1e-300) {
        return Err(Error::invalid(
            "parabola fit needs at least three distinct masked samples",
        ));
    }
    Ok(w.iter()
        .zip(offsets)
        .map(|(w, x)| w * (total * x * x - s2) / den)
        .collect())
}

fn offsets_from(angles: &[f64], doa_index: usize) -> Result<Vec<f64>> {
    if doa_index >= angles.len() {
        return Err(Error::invalid("DoA index outside the cut"));
    }
    Ok(angles.iter().map(|a| a - angles[doa_index]).collect())
}

/// Width `2√(ΔL/|a|)` from a masked parabola fit to a dB cut.
pub fn beamwidth_parabola(
    angles: &[f64],
    values_db: &[f64],
    doa_index: usize,
    sigma: f64,
    level_drop_db: f64,
) -> Result<Beamwidth> {
    check_len("cut angles vs values", angles.len(), values_db.len())?;
    let c = parabola_coefficients(&offsets_from(angles, doa_index)?, sigma)?;
    let a: f64 = c.iter().zip(values_db).map(|(c, b)| c * b).sum();
    Ok(width_from_curvature(a, level_drop_db))
}

fn width_from_curvature(a: f64, level_drop_db: f64) -> Beamwidth {
    if a < 0.0 {
        Beamwidth {
            width: 2.0 * (level_drop_db / -a).sqrt(),
            valid: true,
        }
    } else {
        Beamwidth {
            width: PI,
            valid: false,
        }
    }
}

const BRANCH_CONCAVE: u64 = 0xB0_0000;

/// Tape version of [`beamwidth_parabola`] over precomputed offsets.
pub fn beamwidth_parabola_var<'t>(
    tape: &'t Tape,
    offsets: &[f64],
    values_db: &[Var<'t>],
    sigma: f64,
    level_drop_db: f64,
) -> Result<(Var<'t>, bool)> {
    check_len("cut offsets vs values", offsets.len(), values_db.len())?;
    let c = parabola_coefficients(offsets, sigma)?;
    let a = tape.dot(&c, values_db);
    let concave = a.value() < 0.0;
    tape.note_branch(BRANCH_CONCAVE | concave as u64);
    if concave {
        let w = ((-a).recip() * level_drop_db).sqrt()? * 2.0;
        Ok((w, true))
    } else {
        Ok((tape.constant(PI), false))
    }
}

/// Reference width: first `−ΔL` crossings on each side of the DoA, linearly
/// interpolated. A side without a crossing is capped at the cut's extent.
pub fn beamwidth_oracle(angles: &[f64], values_db: &[f64], doa_index: usize, level_drop_db: f64) -> Result<Beamwidth> {
    check_len("cut angles vs values", angles.len(), values_db.len())?;
    if doa_index >= angles.len() {
        return Err(Error::invalid("DoA index outside the cut"));
    }
    let level = values_db[doa_index] - level_drop_db;
    let center = angles[doa_index];
    let mut valid = true;
    let mut half = |step: isize| {
        let mut i = doa_index as isize;
        loop {
            let j = i + step;
            if j < 0 || j as usize >= angles.len() {
                valid = false;
                return (angles[i as usize] - center).abs();
            }
            let (a, b) = (values_db[i as usize], values_db[j as usize]);
            if b <= level {
                let t = (a - level) / (a - b);
                let (xa, xb) = (angles[i as usize], angles[j as usize]);
                return (xa + t * (xb - xa) - center).abs();
            }
            i = j;
        }
    };
    let left = half(-1);
    let right = half(1);
    Ok(Beamwidth {
        width: left + right,
        valid,
    })
}

/// Frequency-dependent mask width for the parabola fit,
/// `clamp(k · c / (f · D), lo, hi)` with `D` the array diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub k: f64,
    /// Radians.
    pub lo: f64,
    /// Radians.
    pub hi: f64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        Self {
            k: 0.8,
            lo: 4f64.to_radians(),
            hi: 30f64.to_radians(),
        }
    }
}

impl SigmaSchedule {
    /// Returns `(σ_θ, σ_φ)`; both axes share the schedule.
    pub fn sigma(&self, frequency: f64, sound_speed: f64, diameter: f64) -> (f64, f64) {
        let raw = if diameter > 0.0 {
            self.k * sound_speed / (frequency * diameter)
        } else {
            self.hi
        };
        let s = raw.clamp(self.lo, self.hi);
        (s, s)
    }
}

/// Per-band metrics of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub frequencies: Vec<f64>,
    /// Linear.
    pub df: Vec<f64>,
    /// Linear.
    pub wng: Vec<f64>,
    /// Radians.
    pub theta: Vec<f64>,
    /// Radians.
    pub phi: Vec<f64>,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl MetricCurves {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn df_db(&self) -> Vec<f64> {
        self.df.iter().map(|&x| to_db(x)).collect()
    }

    pub fn wng_db(&self) -> Vec<f64> {
        self.wng.iter().map(|&x| to_db(x)).collect()
    }

    /// Columns `frequency,DF_dB,WNG_dB,theta_deg,phi_deg`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frequency,DF_dB,WNG_dB,theta_deg,phi_deg")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                self.frequencies[i],
                to_db(self.df[i]),
                to_db(self.wng[i]),
                self.theta[i].to_degrees(),
                self.phi[i].to_degrees()
            )?;
        }
        Ok(())
    }
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}
