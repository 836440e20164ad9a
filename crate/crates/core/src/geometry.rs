//! Concentric circular array layouts.
//!
//! Every ring of radius `ρ > 0` receives the smallest microphone count whose
//! adjacent-chord spacing still covers half the shortest wavelength of
//! interest (`f_max = f_s / 2`). A zero-radius ring is a single microphone at
//! the origin.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

fn default_sound_speed() -> f64 {
    DEFAULT_SOUND_SPEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// Ring radii in meters, strictly increasing.
    pub ring_radii: Vec<f64>,
    /// Sampling frequency in Hz.
    pub sample_rate: f64,
    /// Speed of sound in m/s.
    #[serde(default = "default_sound_speed")]
    pub sound_speed: f64,
}

impl ArrayConfig {
    pub fn new(ring_radii: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            ring_radii,
            sample_rate,
            sound_speed: DEFAULT_SOUND_SPEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ring_radii.is_empty() {
            return Err(Error::invalid("ring_radii: at least one ring is required"));
        }
        for (i, &r) in self.ring_radii.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::invalid(format!(
                    "ring_radii[{i}]: radius must be finite and non-negative, got {r}"
                )));
            }
        }
        if self.ring_radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("ring_radii: radii must be strictly increasing"));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample_rate: must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.sound_speed.is_finite() && self.sound_speed > 0.0) {
            return Err(Error::invalid(format!(
                "sound_speed: must be positive, got {}",
                self.sound_speed
            )));
        }
        Ok(())
    }

    /// Shortest wavelength of interest, `c / (f_s / 2)`.
    pub fn min_wavelength(&self) -> f64 {
        self.sound_speed / (self.sample_rate / 2.0)
    }
}

/// Minimum microphone count for a ring so adjacent chords are at least
/// `min_wavelength / 2` long.
pub fn mics_per_ring(radius: f64, min_wavelength: f64) -> Result<usize> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::invalid(format!("radius must be non-negative, got {radius}")));
    }
    if !(min_wavelength.is_finite() && min_wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "min_wavelength must be positive, got {min_wavelength}"
        )));
    }
    if radius == 0.0 {
        return Ok(1);
    }
    let ratio = min_wavelength / (4.0 * radius);
    if ratio > 1.0 {
        return Err(Error::invalid(format!(
            "ring of radius {radius} m is too small for two non-aliasing microphones \
             at wavelength {min_wavelength} m"
        )));
    }
    Ok((PI / ratio.asin()).floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub radius: f64,
    pub mic_count: usize,
    /// Angular positions in radians, measured from +x.
    pub angles: Vec<f64>,
}

impl Ring {
    fn uniform(radius: f64, mic_count: usize) -> Self {
        let angles = (0..mic_count).map(|m| 2.0 * PI * m as f64 / mic_count as f64).collect();
        Self {
            radius,
            mic_count,
            angles,
        }
    }
}

/// Immutable array layout with precomputed positions and pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    rings: Vec<Ring>,
    positions: Vec<[f64; 3]>,
    distances: Vec<f64>,
    ring_of: Vec<usize>,
    ring_offsets: Vec<usize>,
    sound_speed: f64,
}

/// Portable description of a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub sound_speed: f64,
    pub rings: Vec<Ring>,
}

pub fn build_geometry(config: &ArrayConfig) -> Result<ArrayGeometry> {
    config.validate()?;
    let lambda_min = config.min_wavelength();
    let rings = config
        .ring_radii
        .iter()
        .map(|&r| mics_per_ring(r, lambda_min).map(|m| Ring::uniform(r, m)))
        .collect::<Result<Vec<_>>>()?;
    ArrayGeometry::from_rings(rings, config.sound_speed)
}

impl ArrayGeometry {
    /// Builds a geometry from explicit rings (e.g. a previously exported layout).
    pub fn from_rings(rings: Vec<Ring>, sound_speed: f64) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::invalid("rings: at least one ring is required"));
        }
        if !(sound_speed.is_finite() && sound_speed > 0.0) {
            return Err(Error::invalid("sound_speed: must be positive"));
        }
        for (r, ring) in rings.iter().enumerate() {
            if ring.angles.len() != ring.mic_count || ring.mic_count == 0 {
                return Err(Error::invalid(format!(
                    "rings[{r}]: mic_count {} does not match {} angles",
                    ring.mic_count,
                    ring.angles.len()
                )));
            }
            if !(ring.radius.is_finite() && ring.radius >= 0.0) {
                return Err(Error::invalid(format!("rings[{r}]: negative radius")));
            }
            if ring.radius == 0.0 && ring.mic_count != 1 {
                return Err(Error::invalid(format!(
                    "rings[{r}]: a zero-radius ring holds exactly one microphone"
                )));
            }
            if ring.angles.iter().any(|a| !(a.abs() < 2.0 * PI)) {
                return Err(Error::invalid(format!("rings[{r}]: angles must lie in (-2π, 2π)")));
            }
        }

        let mut positions = Vec::new();
        let mut ring_of = Vec::new();
        let mut ring_offsets = Vec::with_capacity(rings.len() + 1);
        for (r, ring) in rings.iter().enumerate() {
            ring_offsets.push(positions.len());
            for &phi in &ring.angles {
                positions.push([ring.radius * phi.cos(), ring.radius * phi.sin(), 0.0]);
                ring_of.push(r);
            }
        }
        ring_offsets.push(positions.len());

        let n = positions.len();
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(&positions[i], &positions[j]);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }

        Ok(Self {
            rings,
            positions,
            distances,
            ring_of,
            ring_offsets,
            sound_speed,
        })
    }

    pub fn from_file(file: GeometryFile) -> Result<Self> {
        Self::from_rings(file.rings, file.sound_speed)
    }

    pub fn to_file(&self) -> GeometryFile {
        GeometryFile {
            sound_speed: self.sound_speed,
            rings: self.rings.clone(),
        }
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    pub fn ring_count(&self) -> usize {
        self.rings.len()
    }

    pub fn total_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn mic_counts(&self) -> Vec<usize> {
        self.rings.iter().map(|r| r.mic_count).collect()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// Flat row-major `M_T × M_T` distance matrix.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.total_mics() + j]
    }

    /// Ring index of microphone `i` in flat ordering.
    pub fn ring_of(&self, i: usize) -> usize {
        self.ring_of[i]
    }

    /// Flat index range covered by ring `r`.
    pub fn ring_range(&self, r: usize) -> std::ops::Range<usize> {
        self.ring_offsets[r]..self.ring_offsets[r + 1]
    }

    /// Flat index of microphone `m` on ring `r`.
    pub fn flat_index(&self, r: usize, m: usize) -> usize {
        self.ring_offsets[r] + m
    }

    /// Largest ring diameter in meters.
    pub fn diameter(&self) -> f64 {
        2.0 * self.rings.iter().map(|r| r.radius).fold(0.0, f64::max)
    }
}

fn euclidean(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
