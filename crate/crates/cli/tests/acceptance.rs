//! Acceptance criteria 1–10. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stdout (uncaptured) and then asserts the outcome.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use ccma_cli::commands::{cmd_design, cmd_eval, gradcheck_toy, random_interior_point, EvalSource};
use ccma_cli::config::RunConfig;
use ccma_core::autodiff::Tape;
use ccma_core::baselines::das_filter;
use ccma_core::design::{DesignProblem, DesignSetup};
use ccma_core::geometry::{build_geometry, ArrayConfig, ArrayGeometry};
use ccma_core::loss::{evaluate, loss_l1, BandMetrics, LossConfig, LossVariant};
use ccma_core::metrics::{
    beamwidth_oracle, beamwidth_parabola, beamwidth_parabola_var, directivity_factor, gamma_matrix, population_std,
    to_db, white_noise_gain,
};
use ccma_core::optimizer::{loss_and_gradient, optimize, OptimizeConfig, RPropConfig, RPropState};
use ccma_core::wavefield::{steering_vector, Direction};
use ccma_core::{Complex64, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RADII: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.20];

fn report(n: usize, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} | {title} | {detail}");
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn reference_array() -> ArrayGeometry {
    build_geometry(&ArrayConfig::new(RADII.to_vec(), 16_000.0)).unwrap()
}

fn doa() -> Direction {
    Direction::from_degrees(45.0, 45.0).unwrap()
}

fn design_bands() -> Vec<f64> {
    (2..=12).map(|k| 500.0 * k as f64).collect()
}

fn reference_problem() -> DesignProblem {
    DesignProblem::new(
        reference_array(),
        DesignSetup::new(doa(), design_bands()),
        Execution::default(),
    )
    .unwrap()
}

fn targets() -> LossConfig {
    LossConfig::l1(40f64.to_radians(), 40f64.to_radians())
}

#[test]
fn criterion_01_geometry_counts() {
    let start = Instant::now();
    let geom = reference_array();
    let counts = geom.mic_counts();
    let elapsed = start.elapsed();
    let lambda_min = 343.0 / 8000.0;
    let oracle: Vec<usize> = RADII
        .iter()
        .map(|&r| {
            if r == 0.0 {
                1
            } else {
                (PI / (lambda_min / (4.0 * r)).asin()).floor() as usize
            }
        })
        .collect();
    let pass = counts == oracle
        && counts == [1, 14, 29, 43, 58]
        && geom.total_mics() == 145
        && elapsed < Duration::from_secs(1);
    report(
        1,
        "mic counts per ring",
        pass,
        &format!(
            "counts {counts:?}, oracle {oracle:?}, total {}, {elapsed:?}",
            geom.total_mics()
        ),
    );
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let (problem, loss) = gradcheck_toy().unwrap();
    assert_eq!(problem.ring_count(), 2);
    assert_eq!(problem.band_count(), 3);
    assert_eq!(
        (loss.variant, loss.alpha, loss.lambda1, loss.lambda2, loss.lambda3),
        (LossVariant::L3, 0.5, 1.0, 1.0, 0.01)
    );
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut worst, mut compared, mut excluded) = (0.0f64, 0usize, 0usize);
    for _ in 0..20 {
        let x = random_interior_point(&problem, &mut rng);
        let base = loss_and_gradient(&problem, &loss, &x, Execution::Sequential).unwrap();
        for k in 0..x.len() {
            let h = 1e-5 * x[k].abs().max(1.0);
            let mut probe = x.clone();
            probe[k] = x[k] + h;
            let plus = loss_and_gradient(&problem, &loss, &probe, Execution::Sequential).unwrap();
            probe[k] = x[k] - h;
            let minus = loss_and_gradient(&problem, &loss, &probe, Execution::Sequential).unwrap();
            if plus.branch_log != base.branch_log || minus.branch_log != base.branch_log {
                excluded += 1;
                continue;
            }
            let fd = (plus.value - minus.value) / (2.0 * h);
            worst = worst.max((base.gradient[k] - fd).abs() / fd.abs().max(1.0));
            compared += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && compared > 0 && elapsed < Duration::from_secs(60);
    report(
        2,
        "L3 gradient vs central differences",
        pass,
        &format!("max rel err {worst:.2e} over {compared} coords ({excluded} at branch switches), {elapsed:?}"),
    );
}

#[test]
fn criterion_03_metric_identities() {
    let single = build_geometry(&ArrayConfig::new(vec![0.0], 16_000.0)).unwrap();
    let dir = Direction::from_degrees(30.0, 100.0).unwrap();
    let mut worst_single = 0.0f64;
    for f in [500.0, 2000.0, 7000.0] {
        let d = steering_vector(&single, f, dir).unwrap();
        let h = vec![d[0]];
        let df = directivity_factor(&h, &d, &gamma_matrix(&single, f).unwrap()).unwrap();
        let wng = white_noise_gain(&h, &d).unwrap();
        worst_single = worst_single.max((df - 1.0).abs()).max((wng - 1.0).abs());
    }

    let geom = reference_array();
    let mut worst_das = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for f in [1000.0, 3000.0, 6000.0] {
        let d = steering_vector(&geom, f, doa()).unwrap();
        let h = das_filter(&geom, f, doa()).unwrap();
        worst_das = worst_das.max((white_noise_gain(&h, &d).unwrap() - 145.0).abs());
        let gamma = gamma_matrix(&geom, f).unwrap();
        let g: Vec<Complex64> = h
            .iter()
            .map(|z| z * Complex64::new(rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5)))
            .collect();
        let base = directivity_factor(&g, &d, &gamma).unwrap();
        for _ in 0..5 {
            let c = Complex64::from_polar(rng.random_range(0.01..100.0), rng.random_range(0.0..2.0 * PI));
            let scaled: Vec<Complex64> = g.iter().map(|z| z * c).collect();
            let df = directivity_factor(&scaled, &d, &gamma).unwrap();
            worst_scale = worst_scale.max((df - base).abs() / base);
        }
    }
    let pass = worst_single <= 1e-12 && worst_das <= 1e-9 && worst_scale <= 1e-12;
    report(
        3,
        "analytic metric identities",
        pass,
        &format!("single mic {worst_single:.1e}, DAS WNG {worst_das:.1e}, DF scaling {worst_scale:.1e}"),
    );
}

// |h^H d|² at (θ, φ), phases built from Cartesian positions.
fn power(geom: &ArrayGeometry, h: &[Complex64], f: f64, theta: f64, phi: f64) -> f64 {
    let (st, c) = (theta.sin(), geom.sound_speed());
    geom.positions()
        .iter()
        .zip(h)
        .map(|(p, w)| {
            let tau = -(p[0] * st * phi.cos() + p[1] * st * phi.sin()) / c;
            w.conj() * Complex64::from_polar(1.0, 2.0 * PI * f * tau)
        })
        .sum::<Complex64>()
        .norm_sqr()
}

#[test]
fn criterion_04_df_quadrature() {
    let start = Instant::now();
    let geom = reference_array();
    let step = 1f64.to_radians();
    let mut worst = 0.0f64;
    for f in [1000.0, 2000.0, 4000.0] {
        let h = das_filter(&geom, f, doa()).unwrap();
        let d = steering_vector(&geom, f, doa()).unwrap();
        let closed = directivity_factor(&h, &d, &gamma_matrix(&geom, f).unwrap()).unwrap();
        let mut acc = 0.0;
        for i in 0..=180 {
            let theta = i as f64 * step;
            let edge = if i == 0 || i == 180 { 0.5 } else { 1.0 };
            let ring: f64 = (0..360).map(|j| power(&geom, &h, f, theta, j as f64 * step)).sum();
            acc += edge * theta.sin() * ring * step * step;
        }
        let integral = power(&geom, &h, f, doa().elevation, doa().azimuth) / (acc / (4.0 * PI));
        worst = worst.max((closed - integral).abs() / integral);
    }
    let elapsed = start.elapsed();
    let pass = worst < 0.02 && elapsed < Duration::from_secs(60);
    report(
        4,
        "DF quadratic form vs spherical quadrature",
        pass,
        &format!("max rel diff {:.3}%, {elapsed:?}", 100.0 * worst),
    );
}

#[test]
fn criterion_05_beamwidth_estimator() {
    let step = 1f64.to_radians();
    let angles: Vec<f64> = (-90..=90).map(|k| k as f64 * step).collect();
    let center = 90;
    let level = 6.0;

    let mut exact = 0.0f64;
    for w_deg in [5.0, 12.5, 20.0, 33.0, 40.0, 57.0, 80.0, 120.0] {
        let w = f64::to_radians(w_deg);
        let a = 4.0 * level / (w * w);
        let cut: Vec<f64> = angles.iter().map(|x| 3.0 - a * x * x).collect();
        for sigma_deg in [4.0, 15.0, 30.0] {
            let est = beamwidth_parabola(&angles, &cut, center, f64::to_radians(sigma_deg), level).unwrap();
            exact = exact.max((est.width - w).abs() / w);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut synthetic = 0.0f64;
    for _ in 0..200 {
        let width = rng.random_range(15.0f64..70.0).to_radians();
        let a = 4.0 * level / (width * width);
        let bend = rng.random_range(-0.1..0.1) * a / (width * width);
        let ripple = rng.random_range(0.0..0.2);
        let freq = rng.random_range(20.0..60.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let cut: Vec<f64> = angles
            .iter()
            .map(|&x| -a * x * x + bend * x.powi(4) + ripple * ((freq * x + phase).sin() - phase.sin()))
            .collect();
        let sigma = (0.6 * width).clamp(4f64.to_radians(), 30f64.to_radians());
        let est = beamwidth_parabola(&angles, &cut, center, sigma, level).unwrap();
        let oracle = beamwidth_oracle(&angles, &cut, center, level).unwrap();
        synthetic = synthetic.max((est.width - oracle.width).abs() / oracle.width);
    }

    let offsets: Vec<f64> = angles.clone();
    let base: Vec<f64> = angles.iter().map(|x| -20.0 * x * x + 0.3 * (7.0 * x).sin()).collect();
    let sigma = 20f64.to_radians();
    let tape = Tape::new();
    let leaves = tape.vars(&base);
    let (w, _) = beamwidth_parabola_var(&tape, &offsets, &leaves, sigma, level).unwrap();
    let grad = tape.backward(w).unwrap().wrt_all(&leaves);
    let mut grad_err = 0.0f64;
    for k in 0..base.len() {
        let h = 1e-6;
        let mut p = base.clone();
        p[k] += h;
        let up = beamwidth_parabola(&angles, &p, center, sigma, level).unwrap().width;
        p[k] -= 2.0 * h;
        let down = beamwidth_parabola(&angles, &p, center, sigma, level).unwrap().width;
        grad_err = grad_err.max((grad[k] - (up - down) / (2.0 * h)).abs());
    }
    let pass = exact <= 1e-9 && synthetic < 0.15 && grad_err < 1e-5;
    report(
        5,
        "parabola beamwidth estimator",
        pass,
        &format!(
            "quadratic rel err {exact:.1e}, 200 synthetic max rel {:.2}%, gradient abs err {grad_err:.1e}",
            100.0 * synthetic
        ),
    );
}

#[test]
fn criterion_06_end_to_end_design() {
    let start = Instant::now();
    let problem = reference_problem();
    let cfg = OptimizeConfig {
        iterations: 2000,
        ..Default::default()
    };
    let out = optimize(&problem, &targets(), &cfg, Execution::default()).unwrap();
    let elapsed = start.elapsed();
    let (lo, hi) = (30f64.to_radians(), 45f64.to_radians());
    let mut outside = Vec::new();
    for (i, f) in out.curves.frequencies.iter().enumerate() {
        let (t, p) = (out.curves.theta[i], out.curves.phi[i]);
        if !(lo..=hi).contains(&t) || !(lo..=hi).contains(&p) {
            outside.push(format!("{f} Hz ({:.1}°, {:.1}°)", t.to_degrees(), p.to_degrees()));
        }
    }
    let series = out.record.best_series();
    let monotone = series.windows(2).all(|w| w[1] <= w[0]);
    let h = das_filter(problem.geometry(), 1000.0, doa()).unwrap();
    let das_df = problem.filter_metrics(0, &h).unwrap().metrics.df;
    let df_gap = to_db(out.curves.df[0]) - to_db(das_df);
    let pass = outside.is_empty() && monotone && df_gap >= -0.5 && elapsed < Duration::from_secs(600);
    report(
        6,
        "L1 design widths in [30°, 45°] over 1–6 kHz",
        pass,
        &format!(
            "{} iterations, best-so-far monotone {monotone}, DF@1kHz vs DAS {df_gap:+.2} dB, {elapsed:?}, bands outside: [{}]",
            out.record.iteration_count(),
            outside.join(", ")
        ),
    );
}

#[test]
fn criterion_07_l3_reduces_to_l1() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = LossConfig {
        variant: LossVariant::L3,
        ..targets()
    };
    let l1 = targets();
    let mut mismatches = 0;
    let trials = 2000;
    for _ in 0..trials {
        let n = rng.random_range(2..16);
        let metrics: Vec<BandMetrics> = (0..n)
            .map(|_| BandMetrics {
                theta: rng.random_range(0.1..1.5),
                phi: rng.random_range(0.1..1.5),
                df: rng.random_range(0.5..200.0),
                wng: rng.random_range(0.5..200.0),
            })
            .collect();
        let total = evaluate(&metrics, &cfg).unwrap().total;
        let mut sum = 0.0;
        for m in &metrics {
            sum += loss_l1(m, &l1).unwrap();
        }
        if total.to_bits() != sum.to_bits() {
            mismatches += 1;
        }
    }
    report(
        7,
        "L3(α=1, λ=0) equals ΣL1 bitwise",
        mismatches == 0,
        &format!("{mismatches} mismatches in {trials} random band sets"),
    );
}

#[test]
fn criterion_08_invariance_regularizer() {
    let problem = reference_problem();
    let run = |lambda1: f64| {
        let loss = LossConfig {
            variant: LossVariant::L3,
            alpha: 1.0,
            lambda1,
            lambda2: 0.0,
            lambda3: 0.0,
            ..targets()
        };
        let out = optimize(&problem, &loss, &OptimizeConfig::default(), Execution::default()).unwrap();
        population_std(&out.curves.df_db())
    };
    let with = run(1.0);
    let without = run(0.0);
    let pass = with <= 1.05 * without;
    report(
        8,
        "DF spread with λ1=1 not above λ1=0 (+5%)",
        pass,
        &format!("std DF {with:.3} dB (λ1=1) vs {without:.3} dB (λ1=0)"),
    );
}

#[test]
fn criterion_09_rprop() {
    let c = RPropConfig::default();
    let mut s = RPropState::new(1, c);
    let mut x = [10.0f64];
    let mut steps = 0;
    let mut monotone = true;
    let mut in_bounds = true;
    while x[0].abs() >= 1e-3 && steps < 200 {
        let before = x[0].abs();
        s.step(&[2.0 * x[0]], &mut x).unwrap();
        steps += 1;
        in_bounds &= s.steps[0] >= c.step_min && s.steps[0] <= c.step_max;
        if steps <= 10 {
            monotone &= x[0].abs() < before;
        }
    }
    let converged = x[0].abs() < 1e-3;

    // coordinate 0 alternates sign, 1 keeps it, 2 sees zeros
    let mut s = RPropState::new(3, c);
    let mut p = [0.0; 3];
    let mut shrink_ok = true;
    let mut grow_ok = true;
    let mut zero_ok = true;
    for k in 0..300 {
        let prev = s.steps.clone();
        let g0 = if k % 2 == 0 { 1.0 } else { -1.0 };
        let p2 = p[2];
        s.step(&[g0, -1.0, 0.0], &mut p).unwrap();
        if k > 0 && s.prev_sign[0] == 0 {
            shrink_ok &= s.steps[0] == (prev[0] * c.eta_minus).max(c.step_min);
        }
        if k > 0 {
            grow_ok &= s.steps[1] == (prev[1] * c.eta_plus).min(c.step_max);
        }
        zero_ok &= p[2] == p2 && s.steps[2] == c.initial_step;
        in_bounds &= s.steps.iter().all(|&g| g >= c.step_min && g <= c.step_max);
    }
    let pass = converged && monotone && in_bounds && shrink_ok && grow_ok && zero_ok && s.steps[0] == c.step_min;
    report(
        9,
        "RProp behavior",
        pass,
        &format!(
            "bowl |x|={:.1e} after {steps} steps, bounds {in_bounds}, shrink {shrink_ok}, grow {grow_ok}, zero-grad {zero_ok}",
            x[0].abs()
        ),
    );
}

#[test]
fn criterion_10_determinism_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
frequencies_hz = [1000, 2500, 4000, 6000]
[array]
radii_m = [0.0, 0.05, 0.10, 0.15, 0.20]
sample_rate_hz = 16000
[doa]
elevation_deg = 45
azimuth_deg = 45
[loss]
variant = "L3"
alpha = 0.5
lambda1 = 1
lambda2 = 1
lambda3 = 0.01
[optimizer]
iterations = 150
seed = 42
"#;
    let base = RunConfig::from_toml(text).unwrap();
    let run = |name: &str, exec: Execution| {
        let mut c = base.clone();
        c.output_dir = dir.path().join(name);
        let out = cmd_design(&c, exec).unwrap();
        (c, out)
    };
    let (ca, a) = run("a", Execution::Parallel);
    let (_, b) = run("b", Execution::Sequential);
    let files = [
        "params.json",
        "metrics.csv",
        "run_record.csv",
        "beampattern_1000.csv",
        "beampattern_6000.csv",
    ];
    let identical = a == b
        && files.iter().all(|f| {
            std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap()
        });

    let mut ce = ca.clone();
    ce.output_dir = dir.path().join("eval");
    let curves = cmd_eval(
        &ce,
        &EvalSource::Params(ca.output_dir.join("params.json")),
        Execution::default(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for (x, y) in [
        (&curves.df, &a.curves.df),
        (&curves.wng, &a.curves.wng),
        (&curves.theta, &a.curves.theta),
        (&curves.phi, &a.curves.phi),
    ] {
        for (u, v) in x.iter().zip(y.iter()) {
            worst = worst.max((u - v).abs() / v.abs().max(1.0));
        }
    }
    let pass = identical && worst <= 1e-12;
    report(
        10,
        "determinism and design → eval round trip",
        pass,
        &format!("same-seed artifacts identical {identical}, round-trip max rel diff {worst:.1e}"),
    );
}
