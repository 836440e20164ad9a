//! Far-field steering vectors and beampatterns.
//!
//! Elevation `θ` is the polar angle from the array normal (`θ = 0` is
//! broadside to the array plane), azimuth `φ` is measured from +x in the
//! array plane. Delays are in seconds relative to the array center.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::ArrayGeometry;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Radians in `[0, π]`.
    pub elevation: f64,
    /// Radians in `[0, 2π)`.
    pub azimuth: f64,
}

impl Direction {
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self> {
        if !(elevation.is_finite() && (0.0..=PI).contains(&elevation)) {
            return Err(Error::invalid(format!("elevation {elevation} rad outside [0, π]")));
        }
        if !(azimuth.is_finite() && (0.0..TWO_PI).contains(&azimuth)) {
            return Err(Error::invalid(format!("azimuth {azimuth} rad outside [0, 2π)")));
        }
        Ok(Self { elevation, azimuth })
    }

    /// Azimuth is wrapped into `[0°, 360°)`.
    pub fn from_degrees(elevation_deg: f64, azimuth_deg: f64) -> Result<Self> {
        Self::new(elevation_deg.to_radians(), wrap_two_pi(azimuth_deg.to_radians()))
    }

    /// Unit propagation-direction vector `(sin θ cos φ, sin θ sin φ, cos θ)`.
    pub fn unit_vector(&self) -> [f64; 3] {
        unit_vector(self.elevation, self.azimuth)
    }
}

pub fn unit_vector(elevation: f64, azimuth: f64) -> [f64; 3] {
    let (st, ct) = elevation.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    [st * cp, st * sp, ct]
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let a = angle.rem_euclid(TWO_PI);
    if a >= TWO_PI {
        0.0
    } else {
        a
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = wrap_two_pi(angle);
    if a > PI {
        a - TWO_PI
    } else {
        a
    }
}

/// Delay in seconds of microphone `(ring, mic)` relative to the array center.
pub fn propagation_delay(geometry: &ArrayGeometry, ring: usize, mic: usize, dir: Direction) -> f64 {
    let ring = &geometry.rings()[ring];
    let phi_m = ring.angles[mic];
    -(ring.radius / geometry.sound_speed()) * dir.elevation.sin() * (dir.azimuth - phi_m).cos()
}

fn check_frequency(frequency: f64) -> Result<()> {
    if frequency.is_finite() && frequency > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("frequency must be positive, got {frequency}")))
    }
}

fn fill_steering(geometry: &ArrayGeometry, frequency: f64, dir: Direction, out: &mut Vec<Complex64>) {
    let omega = TWO_PI * frequency;
    let k = -omega / geometry.sound_speed() * dir.elevation.sin();
    for ring in geometry.rings() {
        for &phi_m in &ring.angles {
            // e^{-j 2π f (-τ)} with τ = -(ρ/c) sin θ cos(φ - φ_m)
            let phase = k * ring.radius * (dir.azimuth - phi_m).cos();
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
}

/// Steering vector of length `M_T` in flat microphone order.
pub fn steering_vector(geometry: &ArrayGeometry, frequency: f64, dir: Direction) -> Result<Vec<Complex64>> {
    check_frequency(frequency)?;
    let mut out = Vec::with_capacity(geometry.total_mics());
    fill_steering(geometry, frequency, dir, &mut out);
    Ok(out)
}

/// Steering vectors for a fixed list of directions at several frequencies.
#[derive(Debug, Clone)]
pub struct SteeringField {
    frequencies: Vec<f64>,
    directions: Vec<Direction>,
    mics: usize,
    // per frequency: direction-major, values[f][g * mics + i]
    values: Vec<Vec<Complex64>>,
}

/// Steering matrix at one frequency.
#[derive(Debug, Clone, Copy)]
pub struct SteeringSlice<'a> {
    pub mics: usize,
    pub directions: usize,
    data: &'a [Complex64],
}

impl<'a> SteeringSlice<'a> {
    pub fn column(&self, g: usize) -> &'a [Complex64] {
        &self.data[g * self.mics..(g + 1) * self.mics]
    }
}

impl SteeringField {
    pub fn new(
        geometry: &ArrayGeometry,
        frequencies: &[f64],
        directions: &[Direction],
        exec: Execution,
    ) -> Result<Self> {
        for &f in frequencies {
            check_frequency(f)?;
        }
        let values = exec::map(exec, frequencies, |&f| {
            let mut v = Vec::with_capacity(geometry.total_mics() * directions.len());
            for &dir in directions {
                fill_steering(geometry, f, dir, &mut v);
            }
            v
        });
        Ok(Self {
            frequencies: frequencies.to_vec(),
            directions: directions.to_vec(),
            mics: geometry.total_mics(),
            values,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn slice(&self, band: usize) -> SteeringSlice<'_> {
        SteeringSlice {
            mics: self.mics,
            directions: self.directions.len(),
            data: &self.values[band],
        }
    }
}

/// `h^H d` for a single steering vector.
pub fn response(h: &[Complex64], d: &[Complex64]) -> Complex64 {
    h.iter().zip(d).map(|(h, d)| h.conj() * d).sum()
}

/// Complex beampattern `B = h^H d` for every direction in the slice.
pub fn beampattern(h: &[Complex64], slice: SteeringSlice<'_>) -> Result<Vec<Complex64>> {
    if h.len() != slice.mics {
        return Err(Error::DimensionMismatch {
            what: "filter length vs microphone count",
            expected: slice.mics,
            got: h.len(),
        });
    }
    Ok((0..slice.directions).map(|g| response(h, slice.column(g))).collect())
}

/// Uniform angular sampling that contains the steering direction exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub resolution: f64,
    doa: Direction,
    doa_elevation_index: usize,
}

impl AngularGrid {
    /// Grid covering elevations `[lo, hi]` and the full azimuth circle.
    /// `resolution` must divide the full circle.
    pub fn new(doa: Direction, resolution: f64, elevation_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = elevation_range;
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        let n_az = (TWO_PI / resolution).round();
        if n_az < 4.0 || ((n_az * resolution) - TWO_PI).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "grid resolution {:.6}° must divide 360°",
                resolution.to_degrees()
            )));
        }
        if !(lo <= doa.elevation + 1e-12 && doa.elevation <= hi + 1e-12) {
            return Err(Error::invalid("steering elevation outside the grid's elevation range"));
        }
        let eps = 1e-9;
        let k_lo = ((lo - doa.elevation) / resolution - eps).ceil() as i64;
        let k_hi = ((hi - doa.elevation) / resolution + eps).floor() as i64;
        let elevations: Vec<f64> = (k_lo..=k_hi)
            .map(|k| (doa.elevation + k as f64 * resolution).clamp(0.0, PI))
            .collect();
        let doa_elevation_index = (-k_lo) as usize;

        let n_az = n_az as usize;
        let mut azimuths: Vec<f64> = (0..n_az)
            .map(|k| wrap_two_pi(doa.azimuth + k as f64 * resolution))
            .collect();
        azimuths.sort_by(|a, b| a.total_cmp(b));

        Ok(Self {
            elevations,
            azimuths,
            resolution,
            doa,
            doa_elevation_index,
        })
    }

    /// Default sampling: 1° steps, elevations over the upper hemisphere.
    pub fn default_for(doa: Direction) -> Result<Self> {
        Self::new(doa, 1f64.to_radians(), (0.0, PI / 2.0))
    }

    pub fn doa(&self) -> Direction {
        self.doa
    }

    pub fn doa_elevation_index(&self) -> usize {
        self.doa_elevation_index
    }

    /// Elevation cut through the DoA azimuth: directions and offsets `θ_i − θ_0`.
    pub fn elevation_cut(&self) -> (Vec<Direction>, Vec<f64>) {
        self.elevations
            .iter()
            .map(|&t| {
                (
                    Direction {
                        elevation: t,
                        azimuth: self.doa.azimuth,
                    },
                    t - self.doa.elevation,
                )
            })
            .unzip()
    }

    /// Azimuth cut at the DoA elevation, centered on the DoA, offsets in `(-π, π]`.
    pub fn azimuth_cut(&self) -> (Vec<Direction>, Vec<f64>) {
        let n = self.azimuths.len() as i64;
        let k_lo = -((n - 1) / 2);
        let k_hi = n / 2;
        (k_lo..=k_hi)
            .map(|k| {
                let off = k as f64 * self.resolution;
                (
                    Direction {
                        elevation: self.doa.elevation,
                        azimuth: wrap_two_pi(self.doa.azimuth + off),
                    },
                    off,
                )
            })
            .unzip()
    }

    /// Index of the DoA sample within [`AngularGrid::azimuth_cut`].
    pub fn azimuth_cut_doa_index(&self) -> usize {
        ((self.azimuths.len() as i64 - 1) / 2) as usize
    }
}

/// Beampattern magnitude in dB relative to the response at the DoA, rows by
/// elevation and columns by azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternGrid {
    pub frequency: f64,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub values_db: Vec<f64>,
}

const DB_POWER_FLOOR: f64 = 1e-30;

pub fn power_db(power: f64) -> f64 {
    10.0 * power.max(DB_POWER_FLOOR).log10()
}

pub fn beampattern_grid(
    geometry: &ArrayGeometry,
    h: &[Complex64],
    frequency: f64,
    grid: &AngularGrid,
    exec: Execution,
) -> Result<BeampatternGrid> {
    check_frequency(frequency)?;
    if h.len() != geometry.total_mics() {
        return Err(Error::DimensionMismatch {
            what: "filter length vs microphone count",
            expected: geometry.total_mics(),
            got: h.len(),
        });
    }
    let d0 = steering_vector(geometry, frequency, grid.doa())?;
    let ref_power = response(h, &d0).norm_sqr();
    if !(ref_power > 0.0) {
        return Err(Error::DegenerateFilter(
            "zero response at the steering direction".into(),
        ));
    }
    let rows = exec::map(exec, &grid.elevations, |&t| {
        let mut d = Vec::with_capacity(h.len());
        grid.azimuths
            .iter()
            .map(|&p| {
                d.clear();
                fill_steering(
                    geometry,
                    frequency,
                    Direction {
                        elevation: t,
                        azimuth: p,
                    },
                    &mut d,
                );
                power_db(response(h, &d).norm_sqr() / ref_power)
            })
            .collect::<Vec<_>>()
    });
    Ok(BeampatternGrid {
        frequency,
        elevations: grid.elevations.clone(),
        azimuths: grid.azimuths.clone(),
        values_db: rows.concat(),
    })
}

impl BeampatternGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values_db[row * self.azimuths.len() + col]
    }

    /// CSV: header `theta_deg\phi_deg,<azimuths>`, one row per elevation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "theta_deg\\phi_deg")?;
        for p in &self.azimuths {
            write!(w, ",{:.6}", p.to_degrees())?;
        }
        writeln!(w)?;
        for (row, t) in self.elevations.iter().enumerate() {
            write!(w, "{:.6}", t.to_degrees())?;
            for col in 0..self.azimuths.len() {
                write!(w, ",{:.6}", self.value(row, col))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
