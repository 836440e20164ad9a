//! Reference beamformers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::ArrayGeometry;
use crate::wavefield::{steering_vector, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    DelayAndSum,
}

impl std::str::FromStr for BaselineKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delay_and_sum" | "das" => Ok(Self::DelayAndSum),
            _ => Err(crate::Error::InvalidArgument(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Delay-and-sum: `h = d(f, DoA) / M_T`.
pub fn das_filter(geometry: &ArrayGeometry, frequency: f64, doa: Direction) -> Result<Vec<Complex64>> {
    let d = steering_vector(geometry, frequency, doa)?;
    let m = d.len() as f64;
    Ok(d.into_iter().map(|z| z / m).collect())
}

pub fn baseline_filter(
    kind: BaselineKind,
    geometry: &ArrayGeometry,
    frequency: f64,
    doa: Direction,
) -> Result<Vec<Complex64>> {
    match kind {
        BaselineKind::DelayAndSum => das_filter(geometry, frequency, doa),
    }
}
