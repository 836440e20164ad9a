//! Differentiable per-band model: `(w, σ) ↦ (Θ, Φ, DF, WNG)`.
//!
//! Everything that does not depend on the design variables is precomputed
//! once per band: the DoA-relative steering products along the two beamwidth
//! cuts and the real quadratic form behind the DF denominator. A band is then
//! evaluated on its own [`Tape`], so bands run in parallel and expose their
//! Jacobians for the cross-band loss.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::ArrayGeometry;
use crate::loss::BandMetrics;
use crate::metrics::{
    self, beamwidth_parabola, beamwidth_parabola_var, directivity_factor, gamma_matrix, white_noise_gain, MetricCurves,
    SigmaSchedule, DF_DENOMINATOR_FLOOR,
};
use crate::wavefield::{self, steering_vector, AngularGrid, Direction, SteeringField};
use crate::weighting::{self, all_distances, constrain_vars, BandParams, DesignParams};

/// Cut samples farther than this many mask widths from the DoA carry a mask
/// weight below `e^{-128}` and are left out of the tape.
pub const MASK_TRUNCATION: f64 = 4.0;

/// Power floor inside the differentiable dB conversion (−120 dB).
pub const DB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSetup {
    pub doa: Direction,
    /// Hz.
    pub frequencies: Vec<f64>,
    /// Radians; must divide 360°.
    pub grid_resolution: f64,
    /// Radians.
    pub elevation_range: (f64, f64),
    pub schedule: SigmaSchedule,
    pub level_drop_db: f64,
}

impl DesignSetup {
    pub fn new(doa: Direction, frequencies: Vec<f64>) -> Self {
        Self {
            doa,
            frequencies,
            grid_resolution: 1f64.to_radians(),
            elevation_range: (0.0, std::f64::consts::FRAC_PI_2),
            schedule: SigmaSchedule::default(),
            level_drop_db: metrics::DEFAULT_LEVEL_DROP_DB,
        }
    }

    pub fn grid(&self) -> Result<AngularGrid> {
        AngularGrid::new(self.doa, self.grid_resolution, self.elevation_range)
    }
}

#[derive(Debug, Clone)]
struct CutModel {
    offsets: Vec<f64>,
    // per retained sample: Re/Im of conj(d_i(DoA)) · d_i(direction)
    coeff_re: Vec<Vec<f64>>,
    coeff_im: Vec<Vec<f64>>,
    sigma: f64,
}

#[derive(Debug, Clone)]
struct BandModel {
    frequency: f64,
    elevation: CutModel,
    azimuth: CutModel,
    // Γ_ij · Re(conj(d_i) d_j), row-major
    coherence: Vec<f64>,
}

/// Metrics of one band plus their Jacobian w.r.t. the band's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEval {
    pub metrics: BandMetrics,
    pub theta_valid: bool,
    pub phi_valid: bool,
    /// Rows: θ, φ, DF, WNG. Columns: the band's `2R` variables.
    pub jacobian: [Vec<f64>; 4],
    /// Branch decisions taken on the band's tape.
    pub branches: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct DesignProblem {
    geometry: ArrayGeometry,
    setup: DesignSetup,
    grid: AngularGrid,
    distances: Vec<f64>,
    bands: Vec<BandModel>,
}

fn build_cut(
    geometry: &ArrayGeometry,
    frequency: f64,
    d_doa: &[Complex64],
    dirs: &[Direction],
    offsets: &[f64],
    sigma: f64,
) -> Result<CutModel> {
    let keep: Vec<usize> = (0..dirs.len())
        .filter(|&i| offsets[i].abs() <= MASK_TRUNCATION * sigma)
        .collect();
    let kept_dirs: Vec<Direction> = keep.iter().map(|&i| dirs[i]).collect();
    let field = SteeringField::new(geometry, &[frequency], &kept_dirs, Execution::Sequential)?;
    let slice = field.slice(0);
    let (mut coeff_re, mut coeff_im) = (Vec::with_capacity(keep.len()), Vec::with_capacity(keep.len()));
    for g in 0..keep.len() {
        let (re, im): (Vec<f64>, Vec<f64>) = slice
            .column(g)
            .iter()
            .zip(d_doa)
            .map(|(d, d0)| {
                let c = d0.conj() * d;
                (c.re, c.im)
            })
            .unzip();
        coeff_re.push(re);
        coeff_im.push(im);
    }
    Ok(CutModel {
        offsets: keep.iter().map(|&i| offsets[i]).collect(),
        coeff_re,
        coeff_im,
        sigma,
    })
}

impl DesignProblem {
    pub fn new(geometry: ArrayGeometry, setup: DesignSetup, exec: Execution) -> Result<Self> {
        if setup.frequencies.is_empty() {
            return Err(Error::invalid("frequencies: at least one band is required"));
        }
        if !(setup.level_drop_db > 0.0) {
            return Err(Error::invalid("level drop must be positive"));
        }
        let grid = setup.grid()?;
        let (el_dirs, el_off) = grid.elevation_cut();
        let (az_dirs, az_off) = grid.azimuth_cut();
        let diameter = geometry.diameter();
        let bands = exec::map(exec, &setup.frequencies, |&f| -> Result<BandModel> {
            let d0 = steering_vector(&geometry, f, setup.doa)?;
            let (s_t, s_p) = setup.schedule.sigma(f, geometry.sound_speed(), diameter);
            let gamma = gamma_matrix(&geometry, f)?;
            let n = geometry.total_mics();
            let mut coherence = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    coherence[i * n + j] = gamma.get(i, j) * (d0[i].conj() * d0[j]).re;
                }
            }
            Ok(BandModel {
                frequency: f,
                elevation: build_cut(&geometry, f, &d0, &el_dirs, &el_off, s_t)?,
                azimuth: build_cut(&geometry, f, &d0, &az_dirs, &az_off, s_p)?,
                coherence,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let distances = all_distances(&geometry, setup.doa);
        Ok(Self {
            geometry,
            setup,
            grid,
            distances,
            bands,
        })
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn setup(&self) -> &DesignSetup {
        &self.setup
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn ring_count(&self) -> usize {
        self.geometry.ring_count()
    }

    /// Variables per band (`R` ring-weight logits followed by `R` width logits).
    pub fn vars_per_band(&self) -> usize {
        2 * self.ring_count()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.setup.frequencies
    }

    /// Records `(Θ, Φ, DF, WNG)` of one band given feasible `(w, σ)` on the tape.
    fn band_metric_vars<'t>(
        &self,
        tape: &'t Tape,
        band: usize,
        w: &[Var<'t>],
        sigma: &[Var<'t>],
    ) -> Result<([Var<'t>; 4], bool, bool)> {
        let model = &self.bands[band];
        let inv_two_sigma_sq: Vec<Var<'t>> = sigma.iter().map(|s| s.square().recip() * 0.5).collect();
        let x: Vec<Var<'t>> = self
            .distances
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let r = self.geometry.ring_of(i);
                let s = (inv_two_sigma_sq[r] * -(d * d)).exp();
                w[r] * s
            })
            .collect();
        let kappa = tape.sum(&x);
        if !(kappa.value() > 0.0) {
            return Err(Error::DegenerateFilter(format!(
                "total weight vanishes at {} Hz",
                model.frequency
            )));
        }
        let kappa_sq = kappa.square();
        let squares: Vec<Var<'t>> = x.iter().map(|v| v.square()).collect();
        let energy = tape.sum(&squares);
        let df = kappa_sq / tape.quad_form(&model.coherence, &x).max(energy * DF_DENOMINATOR_FLOOR);
        let wng = kappa_sq / energy;

        let inv_kappa_sq = kappa_sq.recip();
        let cut_db = |cut: &CutModel| -> Result<Vec<Var<'t>>> {
            (0..cut.offsets.len())
                .map(|g| {
                    let re = tape.dot(&cut.coeff_re[g], &x);
                    let im = tape.dot(&cut.coeff_im[g], &x);
                    let p = (re.square() + im.square()) * inv_kappa_sq + DB_FLOOR;
                    Ok(p.log10()? * 10.0)
                })
                .collect()
        };
        let level = self.setup.level_drop_db;
        let el = cut_db(&model.elevation)?;
        let (theta, t_ok) = beamwidth_parabola_var(tape, &model.elevation.offsets, &el, model.elevation.sigma, level)?;
        let az = cut_db(&model.azimuth)?;
        let (phi, p_ok) = beamwidth_parabola_var(tape, &model.azimuth.offsets, &az, model.azimuth.sigma, level)?;
        Ok(([theta, phi, df, wng], t_ok, p_ok))
    }

    fn check_band_vars(&self, vars: &[f64]) -> Result<()> {
        if vars.len() != self.vars_per_band() {
            return Err(Error::DimensionMismatch {
                what: "band variables vs 2 × ring count",
                expected: self.vars_per_band(),
                got: vars.len(),
            });
        }
        if vars.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design variable".into()));
        }
        Ok(())
    }

    /// Metrics and Jacobian of one band at unconstrained variables `[u; v]`.
    pub fn band_eval(&self, band: usize, vars: &[f64]) -> Result<BandEval> {
        self.check_band_vars(vars)?;
        let r = self.ring_count();
        let tape = Tape::new();
        let leaves = tape.vars(vars);
        let (w, sigma) = constrain_vars(&tape, &leaves[..r], &leaves[r..]);
        let (outs, t_ok, p_ok) = self.band_metric_vars(&tape, band, &w, &sigma)?;
        let mut jacobian: [Vec<f64>; 4] = Default::default();
        for (k, out) in outs.iter().enumerate() {
            jacobian[k] = tape.backward(*out)?.wrt_all(&leaves);
        }
        Ok(BandEval {
            metrics: BandMetrics {
                theta: outs[0].value(),
                phi: outs[1].value(),
                df: outs[2].value(),
                wng: outs[3].value(),
            },
            theta_valid: t_ok,
            phi_valid: p_ok,
            jacobian,
            branches: tape.branches(),
        })
    }

    /// [`DesignProblem::band_eval`] for all bands; `vars` is band-major.
    pub fn eval_all(&self, vars: &[f64], exec: Execution) -> Result<Vec<BandEval>> {
        let per = self.vars_per_band();
        if vars.len() != per * self.band_count() {
            return Err(Error::DimensionMismatch {
                what: "design variables vs bands × 2R",
                expected: per * self.band_count(),
                got: vars.len(),
            });
        }
        exec::map_range(exec, self.band_count(), |b| {
            self.band_eval(b, &vars[b * per..(b + 1) * per])
        })
        .into_iter()
        .collect()
    }

    /// Tape forward pass for one band of feasible parameters.
    pub fn band_metrics(&self, band: usize, params: &BandParams) -> Result<(BandMetrics, bool, bool)> {
        params.validate(self.ring_count())?;
        let tape = Tape::new();
        let w = tape.vars(&params.ring_weights);
        let sigma = tape.vars(&params.window_widths);
        let (outs, t_ok, p_ok) = self.band_metric_vars(&tape, band, &w, &sigma)?;
        Ok((
            BandMetrics {
                theta: outs[0].value(),
                phi: outs[1].value(),
                df: outs[2].value(),
                wng: outs[3].value(),
            },
            t_ok,
            p_ok,
        ))
    }

    /// Checks a parameter set against this problem's bands and rings.
    pub fn check_params(&self, params: &DesignParams) -> Result<()> {
        if params.bands.len() != self.band_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter bands vs configured frequencies",
                expected: self.band_count(),
                got: params.bands.len(),
            });
        }
        for (b, (p, f)) in params.bands.iter().zip(self.frequencies()).enumerate() {
            if (p.frequency - f).abs() > 1e-9 * f.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "bands[{b}]: parameter frequency {} Hz does not match configured {} Hz",
                    p.frequency, f
                )));
            }
        }
        params.validate(self.ring_count())
    }

    pub fn evaluate(&self, params: &DesignParams, exec: Execution) -> Result<MetricCurves> {
        self.check_params(params)?;
        let rows = exec::map_range(exec, self.band_count(), |b| self.band_metrics(b, &params.bands[b]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(curves_from(self.frequencies(), rows.iter().map(|r| r.0)))
    }

    /// Complex filter of one band (see [`weighting::assemble_filter`]).
    pub fn filter(&self, params: &BandParams) -> Result<Vec<Complex64>> {
        weighting::assemble_filter(&self.geometry, params, self.setup.doa)
    }

    /// Metrics of an arbitrary filter via full beampattern cuts, without the tape.
    pub fn filter_metrics(&self, band: usize, h: &[Complex64]) -> Result<FilterMetrics> {
        let f = self.bands[band].frequency;
        filter_metrics(&self.geometry, &self.setup, &self.grid, f, h)
    }
}

pub fn curves_from(frequencies: &[f64], rows: impl Iterator<Item = BandMetrics>) -> MetricCurves {
    let mut c = MetricCurves {
        frequencies: frequencies.to_vec(),
        df: Vec::new(),
        wng: Vec::new(),
        theta: Vec::new(),
        phi: Vec::new(),
    };
    for m in rows {
        c.theta.push(m.theta);
        c.phi.push(m.phi);
        c.df.push(m.df);
        c.wng.push(m.wng);
    }
    c
}

/// Metrics from direct filter evaluation, with crossing-search widths alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterMetrics {
    pub metrics: BandMetrics,
    pub theta_oracle: f64,
    pub phi_oracle: f64,
}

pub fn filter_metrics(
    geometry: &ArrayGeometry,
    setup: &DesignSetup,
    grid: &AngularGrid,
    frequency: f64,
    h: &[Complex64],
) -> Result<FilterMetrics> {
    let d0 = steering_vector(geometry, frequency, setup.doa)?;
    let gamma = gamma_matrix(geometry, frequency)?;
    let df = directivity_factor(h, &d0, &gamma)?;
    let wng = white_noise_gain(h, &d0)?;
    let ref_power = wavefield::response(h, &d0).norm_sqr();
    let (s_t, s_p) = setup
        .schedule
        .sigma(frequency, geometry.sound_speed(), geometry.diameter());
    let cut = |dirs: &[Direction]| -> Result<Vec<f64>> {
        let field = SteeringField::new(geometry, &[frequency], dirs, Execution::Sequential)?;
        Ok(wavefield::beampattern(h, field.slice(0))?
            .iter()
            .map(|b| 10.0 * (b.norm_sqr() / ref_power + DB_FLOOR).log10())
            .collect())
    };
    let (el_dirs, el_off) = grid.elevation_cut();
    let (az_dirs, az_off) = grid.azimuth_cut();
    let el = cut(&el_dirs)?;
    let az = cut(&az_dirs)?;
    let ei = grid.doa_elevation_index();
    let ai = grid.azimuth_cut_doa_index();
    let level = setup.level_drop_db;
    let theta = beamwidth_parabola(&el_off, &el, ei, s_t, level)?;
    let phi = beamwidth_parabola(&az_off, &az, ai, s_p, level)?;
    Ok(FilterMetrics {
        metrics: BandMetrics {
            theta: theta.width,
            phi: phi.width,
            df,
            wng,
        },
        theta_oracle: metrics::beamwidth_oracle(&el_off, &el, ei, level)?.width,
        phi_oracle: metrics::beamwidth_oracle(&az_off, &az, ai, level)?.width,
    })
}
