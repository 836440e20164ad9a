//! Run configuration. Angles are degrees here and radians everywhere else.

use std::path::{Path, PathBuf};

use ccma_core::design::DesignSetup;
use ccma_core::geometry::{ArrayConfig, DEFAULT_SOUND_SPEED};
use ccma_core::loss::{LossConfig, LossVariant};
use ccma_core::metrics::{SigmaSchedule, DEFAULT_LEVEL_DROP_DB};
use ccma_core::optimizer::OptimizeConfig;
use ccma_core::wavefield::Direction;
use serde::{Deserialize, Serialize};

use crate::error::{field, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_frequencies")]
    pub frequencies_hz: Vec<f64>,
    /// Bands to export full beampattern grids for; each must be a design band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_frequencies_hz: Option<Vec<f64>>,
    #[serde(default = "default_grid")]
    pub grid_deg: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub array: ArraySection,
    pub doa: DoaSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub radii_m: Vec<f64>,
    pub sample_rate_hz: f64,
    #[serde(default = "default_sound_speed")]
    pub sound_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaSection {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub variant: LossVariant,
    pub target_theta_deg: f64,
    pub target_phi_deg: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            variant: LossVariant::L1,
            target_theta_deg: 40.0,
            target_phi_deg: 40.0,
            alpha: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub iterations: usize,
    pub seed: u64,
    pub patience: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizeConfig::default();
        Self {
            iterations: d.iterations,
            seed: d.seed,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub k: f64,
    pub min_deg: f64,
    pub max_deg: f64,
    pub level_drop_db: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            k: SigmaSchedule::default().k,
            min_deg: 4.0,
            max_deg: 30.0,
            level_drop_db: DEFAULT_LEVEL_DROP_DB,
        }
    }
}

fn default_frequencies() -> Vec<f64> {
    (1..=15).map(|k| 500.0 * k as f64).collect()
}

fn default_grid() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("ccma_out")
}

fn default_sound_speed() -> f64 {
    DEFAULT_SOUND_SPEED
}

const DEFAULT_PATTERN_BANDS: [f64; 2] = [1000.0, 6000.0];

fn finite_positive(name: &str, x: f64) -> CliResult<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(field(name, format!("must be finite and positive, got {x}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.frequencies_hz.is_empty() {
            return Err(field("frequencies_hz", "must not be empty"));
        }
        let nyquist = self.array.sample_rate_hz / 2.0;
        for (i, &f) in self.frequencies_hz.iter().enumerate() {
            finite_positive(&format!("frequencies_hz[{i}]"), f)?;
            if f > nyquist {
                return Err(field(
                    &format!("frequencies_hz[{i}]"),
                    format!("{f} Hz exceeds Nyquist {nyquist} Hz"),
                ));
            }
            if self.frequencies_hz[..i].contains(&f) {
                return Err(field(&format!("frequencies_hz[{i}]"), format!("duplicate band {f} Hz")));
            }
        }
        if let Some(p) = &self.pattern_frequencies_hz {
            for (i, f) in p.iter().enumerate() {
                if !self.frequencies_hz.contains(f) {
                    return Err(field(
                        &format!("pattern_frequencies_hz[{i}]"),
                        format!("{f} Hz is not a design band"),
                    ));
                }
            }
        }
        finite_positive("grid_deg", self.grid_deg)?;
        let steps = 360.0 / self.grid_deg;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(field("grid_deg", format!("{} does not divide 360", self.grid_deg)));
        }
        ArrayConfig::new(self.array.radii_m.clone(), self.array.sample_rate_hz)
            .validate()
            .map_err(|e| field("array", e))?;
        finite_positive("array.sound_speed", self.array.sound_speed)?;
        if !(0.0..=180.0).contains(&self.doa.elevation_deg) {
            return Err(field("doa.elevation_deg", "must lie in [0, 180]"));
        }
        if !self.doa.azimuth_deg.is_finite() {
            return Err(field("doa.azimuth_deg", "must be finite"));
        }
        finite_positive("loss.target_theta_deg", self.loss.target_theta_deg)?;
        finite_positive("loss.target_phi_deg", self.loss.target_phi_deg)?;
        if !(0.0..=1.0).contains(&self.loss.alpha) {
            return Err(field("loss.alpha", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("loss.lambda1", self.loss.lambda1),
            ("loss.lambda2", self.loss.lambda2),
            ("loss.lambda3", self.loss.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(field(name, "must be finite and non-negative"));
            }
        }
        if self.loss.variant == LossVariant::L3 && self.frequencies_hz.len() < 2 {
            return Err(field("loss.variant", "L3 needs at least two bands"));
        }
        if self.optimizer.iterations == 0 {
            return Err(field("optimizer.iterations", "must be at least 1"));
        }
        if self.optimizer.patience == 0 {
            return Err(field("optimizer.patience", "must be at least 1"));
        }
        finite_positive("schedule.k", self.schedule.k)?;
        finite_positive("schedule.min_deg", self.schedule.min_deg)?;
        if !(self.schedule.max_deg >= self.schedule.min_deg) {
            return Err(field("schedule.max_deg", "must be at least schedule.min_deg"));
        }
        finite_positive("schedule.level_drop_db", self.schedule.level_drop_db)?;
        Ok(())
    }

    pub fn array_config(&self) -> ArrayConfig {
        ArrayConfig {
            sound_speed: self.array.sound_speed,
            ..ArrayConfig::new(self.array.radii_m.clone(), self.array.sample_rate_hz)
        }
    }

    pub fn doa(&self) -> CliResult<Direction> {
        Direction::from_degrees(self.doa.elevation_deg, self.doa.azimuth_deg).map_err(|e| field("doa", e))
    }

    pub fn setup(&self) -> CliResult<DesignSetup> {
        let mut s = DesignSetup::new(self.doa()?, self.frequencies_hz.clone());
        s.grid_resolution = self.grid_deg.to_radians();
        s.schedule = SigmaSchedule {
            k: self.schedule.k,
            lo: self.schedule.min_deg.to_radians(),
            hi: self.schedule.max_deg.to_radians(),
        };
        s.level_drop_db = self.schedule.level_drop_db;
        Ok(s)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            variant: self.loss.variant,
            target_theta: self.loss.target_theta_deg.to_radians(),
            target_phi: self.loss.target_phi_deg.to_radians(),
            alpha: self.loss.alpha,
            lambda1: self.loss.lambda1,
            lambda2: self.loss.lambda2,
            lambda3: self.loss.lambda3,
        }
    }

    pub fn optimizer(&self) -> OptimizeConfig {
        OptimizeConfig {
            iterations: self.optimizer.iterations,
            seed: self.optimizer.seed,
            patience: self.optimizer.patience,
            ..OptimizeConfig::default()
        }
    }

    /// Explicit list, or the default pattern bands that are design bands.
    pub fn pattern_frequencies(&self) -> Vec<f64> {
        match &self.pattern_frequencies_hz {
            Some(p) => p.clone(),
            None => DEFAULT_PATTERN_BANDS
                .iter()
                .copied()
                .filter(|f| self.frequencies_hz.contains(f))
                .collect(),
        }
    }
}

/// Grid of L3 weights to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub mode: SweepMode,
    /// Parameter name → values. Names: alpha, lambda1, lambda2, lambda3.
    pub values: std::collections::BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Cartesian product of all lists.
    #[default]
    Product,
    /// Lists of equal length, taken element-wise.
    Zip,
}

pub const SWEEP_PARAMETERS: [&str; 4] = ["alpha", "lambda1", "lambda2", "lambda3"];

/// One sweep point: `(name, value)` pairs in canonical parameter order.
pub type SweepPoint = Vec<(String, f64)>;

impl SweepSpec {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| CliError::Validation(format!("sweep: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.values.is_empty() {
            return Err(field("values", "at least one parameter must be swept"));
        }
        for (name, list) in &self.values {
            if !SWEEP_PARAMETERS.contains(&name.as_str()) {
                return Err(field(
                    &format!("values.{name}"),
                    format!(
                        "unknown sweep parameter, expected one of {}",
                        SWEEP_PARAMETERS.join(", ")
                    ),
                ));
            }
            if list.is_empty() {
                return Err(field(&format!("values.{name}"), "must not be empty"));
            }
            for (i, v) in list.iter().enumerate() {
                let ok = v.is_finite() && *v >= 0.0 && (name != "alpha" || *v <= 1.0);
                if !ok {
                    return Err(field(&format!("values.{name}[{i}]"), format!("out of range: {v}")));
                }
            }
        }
        if self.mode == SweepMode::Zip {
            let lens: Vec<usize> = self.values.values().map(Vec::len).collect();
            if lens.iter().any(|&l| l != lens[0]) {
                return Err(field("values", "zip mode needs lists of equal length"));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let names: Vec<&str> = SWEEP_PARAMETERS
            .iter()
            .copied()
            .filter(|n| self.values.contains_key(*n))
            .collect();
        match self.mode {
            SweepMode::Zip => (0..self.values[names[0]].len())
                .map(|i| names.iter().map(|n| (n.to_string(), self.values[*n][i])).collect())
                .collect(),
            SweepMode::Product => {
                let mut out: Vec<SweepPoint> = vec![Vec::new()];
                for n in names {
                    out = out
                        .into_iter()
                        .flat_map(|p| {
                            self.values[n].iter().map(move |&v| {
                                let mut q = p.clone();
                                q.push((n.to_string(), v));
                                q
                            })
                        })
                        .collect();
                }
                out
            }
        }
    }
}

/// Applies a sweep point to a copy of the loss section.
pub fn apply_point(loss: &LossSection, point: &SweepPoint) -> LossSection {
    let mut l = *loss;
    for (name, v) in point {
        match name.as_str() {
            "alpha" => l.alpha = *v,
            "lambda1" => l.lambda1 = *v,
            "lambda2" => l.lambda2 = *v,
            "lambda3" => l.lambda3 = *v,
            _ => unreachable!("validated sweep parameter"),
        }
    }
    l
}
