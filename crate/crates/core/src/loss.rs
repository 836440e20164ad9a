//! Piecewise beamwidth/directivity objectives.
//!
//! Each band contributes a branch selected on detached values: the offending
//! beamwidth when exactly one axis is too wide, the sum of both widths when
//! both are, and otherwise a performance term. L3 adds two cross-band terms,
//! the spread of DF/WNG across bands and the mismatch of the performance term
//! between mirrored band pairs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    L1,
    L2,
    L3,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            _ => Err(Error::invalid(format!("unknown loss variant {s:?}"))),
        }
    }
}

/// Loss settings. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub target_theta: f64,
    pub target_phi: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossConfig {
    pub fn l1(target_theta: f64, target_phi: f64) -> Self {
        Self {
            variant: LossVariant::L1,
            target_theta,
            target_phi,
            alpha: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_theta > 0.0 && self.target_phi > 0.0) {
            return Err(Error::invalid("loss targets must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Undershoot margin beyond which L2 starts trading directivity for width.
pub const L2_TOLERANCE: f64 = 1.0 * std::f64::consts::PI / 180.0;

/// Floor under the variance inside the cross-band std.
pub const STD_EPS: f64 = 1e-12;

/// Detached per-band metrics; DF and WNG linear, widths in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub theta: f64,
    pub phi: f64,
    pub df: f64,
    pub wng: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BandMetricVars<'t> {
    pub theta: Var<'t>,
    pub phi: Var<'t>,
    pub df: Var<'t>,
    pub wng: Var<'t>,
}

impl<'t> BandMetricVars<'t> {
    pub fn leaves(tape: &'t Tape, m: &BandMetrics) -> Self {
        Self {
            theta: tape.var(m.theta),
            phi: tape.var(m.phi),
            df: tape.var(m.df),
            wng: tape.var(m.wng),
        }
    }

    pub fn values(&self) -> BandMetrics {
        BandMetrics {
            theta: self.theta.value(),
            phi: self.phi.value(),
            df: self.df.value(),
            wng: self.wng.value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Elevation width over target.
    Theta,
    /// Azimuth width over target.
    Phi,
    /// Both widths over target.
    Both,
    /// Performance term (−log₁₀ DF for L1/L2, P for L3).
    Performance,
    /// L2 only: both widths well under target, `+log₁₀ DF`.
    Broaden,
}

/// Evaluated loss with its components.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLossTerms {
    pub branches: Vec<Branch>,
    pub band_values: Vec<f64>,
    /// Performance term per band (`P_f` for L3, `−log₁₀ DF` otherwise).
    pub performance: Vec<f64>,
    pub invariance: f64,
    pub differences: f64,
    pub total: f64,
}

pub fn select_branch(m: &BandMetrics, cfg: &LossConfig) -> Branch {
    let wide_t = m.theta > cfg.target_theta;
    let wide_p = m.phi > cfg.target_phi;
    match (wide_t, wide_p) {
        (true, false) => Branch::Theta,
        (false, true) => Branch::Phi,
        (true, true) => Branch::Both,
        (false, false) => {
            if cfg.variant == LossVariant::L2
                && m.theta < cfg.target_theta - L2_TOLERANCE
                && m.phi < cfg.target_phi - L2_TOLERANCE
            {
                Branch::Broaden
            } else {
                Branch::Performance
            }
        }
    }
}

fn branch_tag(band: usize, b: Branch) -> u64 {
    0xC0_0000 | ((band as u64) << 4) | b as u64
}

fn performance<'t>(m: &BandMetricVars<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    let log_df = m.df.log10()?;
    if cfg.variant == LossVariant::L3 {
        let log_wng = m.wng.log10()?;
        Ok(-(log_df * cfg.alpha) - log_wng * (1.0 - cfg.alpha))
    } else {
        Ok(-log_df)
    }
}

/// Population standard deviation on the tape.
pub fn std_var<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Result<Var<'t>> {
    let n = xs.len() as f64;
    let mean = tape.sum(xs) / n;
    let sq: Vec<Var<'t>> = xs.iter().map(|&x| (x - mean).square()).collect();
    (tape.sum(&sq) / n).sqrt_floored(STD_EPS)
}

/// Total loss over all bands on one tape.
pub fn total_loss<'t>(
    tape: &'t Tape,
    metrics: &[BandMetricVars<'t>],
    cfg: &LossConfig,
) -> Result<(Var<'t>, BandLossTerms)> {
    if metrics.is_empty() {
        return Err(Error::invalid("loss needs at least one band"));
    }
    if cfg.variant == LossVariant::L3 && metrics.len() < 2 {
        return Err(Error::invalid("L3 needs at least two bands"));
    }
    let mut branches = Vec::with_capacity(metrics.len());
    let mut band_vars = Vec::with_capacity(metrics.len());
    let mut perf = Vec::with_capacity(metrics.len());
    for (f, m) in metrics.iter().enumerate() {
        let branch = select_branch(&m.values(), cfg);
        tape.note_branch(branch_tag(f, branch));
        let p = performance(m, cfg)?;
        let v = match branch {
            Branch::Theta => m.theta,
            Branch::Phi => m.phi,
            Branch::Both => m.theta + m.phi,
            Branch::Performance => p,
            Branch::Broaden => m.df.log10()?,
        };
        branches.push(branch);
        band_vars.push(v);
        perf.push(p);
    }
    let mut total = tape.sum(&band_vars);
    let (mut invariance, mut differences) = (0.0, 0.0);
    if cfg.variant == LossVariant::L3 {
        let dfs: Vec<Var<'t>> = metrics.iter().map(|m| m.df).collect();
        let wngs: Vec<Var<'t>> = metrics.iter().map(|m| m.wng).collect();
        let inv = std_var(tape, &dfs)? * cfg.lambda1 + std_var(tape, &wngs)? * cfg.lambda2;
        // bands are 1-based in the pairing: i = 2..=⌊F/2⌋ pairs with F − i + 1
        let n = metrics.len();
        let gaps: Vec<Var<'t>> = (2..=n / 2).map(|i| (perf[i - 1] - perf[n - i]).abs()).collect();
        let diff = tape.sum(&gaps) * cfg.lambda3;
        invariance = inv.value();
        differences = diff.value();
        total = total + inv + diff;
    }
    let terms = BandLossTerms {
        branches,
        band_values: band_vars.iter().map(|v| v.value()).collect(),
        performance: perf.iter().map(|v| v.value()).collect(),
        invariance,
        differences,
        total: total.value(),
    };
    Ok((total, terms))
}

/// Detached evaluation of the full loss.
pub fn evaluate(metrics: &[BandMetrics], cfg: &LossConfig) -> Result<BandLossTerms> {
    let tape = Tape::new();
    let vars: Vec<_> = metrics.iter().map(|m| BandMetricVars::leaves(&tape, m)).collect();
    Ok(total_loss(&tape, &vars, cfg)?.1)
}

fn single_band(m: &BandMetrics, cfg: &LossConfig, variant: LossVariant) -> Result<f64> {
    let cfg = LossConfig { variant, ..*cfg };
    Ok(evaluate(std::slice::from_ref(m), &cfg)?.total)
}

pub fn loss_l1(m: &BandMetrics, cfg: &LossConfig) -> Result<f64> {
    single_band(m, cfg, LossVariant::L1)
}

pub fn loss_l2(m: &BandMetrics, cfg: &LossConfig) -> Result<f64> {
    single_band(m, cfg, LossVariant::L2)
}

pub fn loss_l3(metrics: &[BandMetrics], cfg: &LossConfig) -> Result<BandLossTerms> {
    evaluate(
        metrics,
        &LossConfig {
            variant: LossVariant::L3,
            ..*cfg
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::population_std;
    use proptest::prelude::*;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn cfg(variant: LossVariant) -> LossConfig {
        LossConfig {
            variant,
            ..LossConfig::l1(deg(40.0), deg(40.0))
        }
    }

    fn band(t: f64, p: f64, df: f64, wng: f64) -> BandMetrics {
        BandMetrics {
            theta: deg(t),
            phi: deg(p),
            df,
            wng,
        }
    }

    #[test]
    fn l1_branches() {
        let c = cfg(LossVariant::L1);
        assert_eq!(loss_l1(&band(50.0, 30.0, 10.0, 5.0), &c).unwrap(), deg(50.0));
        assert_eq!(loss_l1(&band(30.0, 50.0, 10.0, 5.0), &c).unwrap(), deg(50.0));
        assert_eq!(loss_l1(&band(30.0, 30.0, 10.0, 5.0), &c).unwrap(), -1.0);
        let both = loss_l1(&band(50.0, 50.0, 10.0, 5.0), &c).unwrap();
        assert!((both - deg(100.0)).abs() < 1e-15);
    }

    #[test]
    fn l2_branches() {
        let c = cfg(LossVariant::L2);
        assert_eq!(loss_l2(&band(20.0, 20.0, 10.0, 5.0), &c).unwrap(), 1.0);
        assert_eq!(loss_l2(&band(50.0, 30.0, 10.0, 5.0), &c).unwrap(), deg(50.0));
        assert_eq!(loss_l2(&band(40.0, 40.0, 10.0, 5.0), &c).unwrap(), -1.0);
        // within the 1° tolerance band
        assert_eq!(loss_l2(&band(39.5, 20.0, 10.0, 5.0), &c).unwrap(), -1.0);
    }

    #[test]
    fn l3_reduces_to_l1() {
        let c = cfg(LossVariant::L3);
        let bands = [
            band(30.0, 35.0, 12.0, 40.0),
            band(50.0, 20.0, 3.0, 9.0),
            band(38.0, 39.0, 80.0, 100.0),
        ];
        let l3 = loss_l3(&bands, &c).unwrap().total;
        let sum: f64 = bands.iter().map(|b| loss_l1(b, &c).unwrap()).sum();
        assert_eq!(l3, sum);
    }

    #[test]
    fn constant_bands_have_no_regularization() {
        let c = LossConfig {
            lambda1: 1.0,
            lambda2: 2.0,
            lambda3: 0.5,
            alpha: 0.3,
            ..cfg(LossVariant::L3)
        };
        let t = loss_l3(&[band(30.0, 30.0, 20.0, 50.0); 6], &c).unwrap();
        assert_eq!(t.invariance, 0.0);
        assert_eq!(t.differences, 0.0);
    }

    #[test]
    fn two_band_std() {
        let c = LossConfig {
            lambda1: 1.0,
            ..cfg(LossVariant::L3)
        };
        let t = loss_l3(&[band(30.0, 30.0, 10.0, 5.0), band(30.0, 30.0, 1000.0, 5.0)], &c).unwrap();
        assert!((t.invariance - 495.0).abs() < 1e-9);
    }

    #[test]
    fn mirrored_differences() {
        // F = 6: pairs (2,5) and (3,4) in 1-based indexing
        let c = LossConfig {
            lambda3: 1.0,
            ..cfg(LossVariant::L3)
        };
        let dfs = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0];
        let bands: Vec<_> = dfs.iter().map(|&d| band(30.0, 30.0, d, 1.0)).collect();
        let t = loss_l3(&bands, &c).unwrap();
        let p = |d: f64| -d.log10();
        let expect = (p(20.0) - p(50.0)).abs() + (p(30.0) - p(40.0)).abs();
        assert!((t.differences - expect).abs() < 1e-14);
        assert!(loss_l3(&bands[..1], &c).is_err());
    }

    #[test]
    fn performance_mixes_df_and_wng() {
        let c = LossConfig {
            alpha: 0.25,
            ..cfg(LossVariant::L3)
        };
        let t = loss_l3(&[band(30.0, 30.0, 100.0, 10.0), band(30.0, 30.0, 10.0, 1000.0)], &c).unwrap();
        assert!((t.performance[0] - (-0.25 * 2.0 - 0.75 * 1.0)).abs() < 1e-15);
        assert!((t.performance[1] - (-0.25 * 1.0 - 0.75 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn branch_boundaries_are_jumps() {
        let c = cfg(LossVariant::L1);
        let eps = 1e-9;
        let below = loss_l1(&band(40.0 - eps, 30.0, 10.0, 1.0), &c).unwrap();
        let above = loss_l1(&band(40.0 + eps, 30.0, 10.0, 1.0), &c).unwrap();
        assert_eq!(below, -1.0);
        assert!((above - deg(40.0)).abs() < 1e-9);
        // continuous inside a branch
        let a = loss_l1(&band(45.0, 30.0, 10.0, 1.0), &c).unwrap();
        let b = loss_l1(&band(45.0 + eps, 30.0, 10.0, 1.0), &c).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        assert!(LossConfig {
            alpha: 1.5,
            ..cfg(LossVariant::L3)
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            lambda2: -1.0,
            ..cfg(LossVariant::L3)
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            target_phi: 0.0,
            ..cfg(LossVariant::L3)
        }
        .validate()
        .is_err());
        assert!("l3".parse::<LossVariant>().is_ok());
        assert!("L4".parse::<LossVariant>().is_err());
    }

    proptest! {
        #[test]
        fn l3_equals_sum_of_l1(raw in proptest::collection::vec((10.0f64..70.0, 10.0f64..70.0, 0.5f64..500.0, 0.5f64..500.0), 2..10)) {
            let c = cfg(LossVariant::L3);
            let bands: Vec<_> = raw.iter().map(|&(t, p, d, w)| band(t, p, d, w)).collect();
            let l3 = loss_l3(&bands, &c).unwrap().total;
            let sum: f64 = bands.iter().map(|b| loss_l1(b, &c).unwrap()).sum();
            prop_assert_eq!(l3.to_bits(), sum.to_bits());
        }

        #[test]
        fn regularizers_non_negative(raw in proptest::collection::vec((0.5f64..500.0, 0.5f64..500.0), 2..10), a in 0.0f64..1.0) {
            let c = LossConfig { alpha: a, lambda1: 0.7, lambda2: 0.3, lambda3: 0.2, ..cfg(LossVariant::L3) };
            let bands: Vec<_> = raw.iter().map(|&(d, w)| band(30.0, 30.0, d, w)).collect();
            let t = loss_l3(&bands, &c).unwrap();
            prop_assert!(t.invariance >= 0.0 && t.differences >= 0.0);
            let dfs: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let wngs: Vec<f64> = raw.iter().map(|r| r.1).collect();
            let expect = 0.7 * population_std(&dfs) + 0.3 * population_std(&wngs);
            prop_assert!((t.invariance - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }
}
