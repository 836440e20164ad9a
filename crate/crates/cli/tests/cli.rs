use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ccma_cli::config::RunConfig;

const CONFIG: &str = r#"
frequencies_hz = [1000, 3000, 6000]
[array]
radii_m = [0.0, 0.05, 0.10, 0.15, 0.20]
sample_rate_hz = 16000
[doa]
elevation_deg = 45
azimuth_deg = 45
[optimizer]
iterations = 30
seed = 3
"#;

fn ccma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccma"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn design_writes_artifacts_and_reruns_identically() {
    let t = setup(CONFIG);
    let d = t.path();
    let o = ccma(d, &["design", "--config", "run.toml", "--out", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "params.json",
        "metrics.csv",
        "run_record.csv",
        "beampattern_1000.csv",
        "beampattern_6000.csv",
        "manifest.toml",
    ] {
        assert!(d.join("a").join(f).is_file(), "missing {f}");
    }
    let manifest = RunConfig::load(&d.join("a/manifest.toml")).unwrap();
    let mut input = RunConfig::from_toml(CONFIG).unwrap();
    input.output_dir = "a".into();
    assert_eq!(manifest, input);

    let o = ccma(d, &["design", "--config", "run.toml", "--out", "b"]);
    assert!(o.status.success());
    let o = ccma(d, &["design", "--config", "a/manifest.toml", "--out", "c"]);
    assert!(o.status.success());
    for f in ["metrics.csv", "run_record.csv", "params.json", "beampattern_1000.csv"] {
        assert_eq!(read(d, &format!("a/{f}")), read(d, &format!("b/{f}")), "{f}");
        assert_eq!(read(d, &format!("a/{f}")), read(d, &format!("c/{f}")), "{f}");
    }

    let o = ccma(
        d,
        &[
            "design",
            "--config",
            "run.toml",
            "--out",
            "s",
            "--seed",
            "4",
            "--workers",
            "1",
        ],
    );
    assert!(o.status.success());
    assert_ne!(read(d, "a/params.json"), read(d, "s/params.json"));
}

#[test]
fn eval_reproduces_design_metrics() {
    let t = setup(CONFIG);
    let d = t.path();
    assert!(ccma(d, &["design", "--config", "run.toml", "--out", "a"])
        .status
        .success());
    let o = ccma(
        d,
        &[
            "eval",
            "--config",
            "run.toml",
            "--params",
            "a/params.json",
            "--out",
            "e",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(d, "a/metrics.csv"), read(d, "e/metrics.csv"));
    assert_eq!(read(d, "a/beampattern_6000.csv"), read(d, "e/beampattern_6000.csv"));
}

#[test]
fn eval_rejects_mismatched_rings() {
    let t = setup(CONFIG);
    let d = t.path();
    assert!(ccma(d, &["design", "--config", "run.toml", "--out", "a"])
        .status
        .success());
    fs::write(
        d.join("three.toml"),
        CONFIG.replace("[0.0, 0.05, 0.10, 0.15, 0.20]", "[0.0, 0.05, 0.10]"),
    )
    .unwrap();
    let o = ccma(
        d,
        &[
            "eval",
            "--config",
            "three.toml",
            "--params",
            "a/params.json",
            "--out",
            "e",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ring"), "{}", stderr(&o));
}

#[test]
fn baseline_eval_emits_pattern_grids() {
    let t = setup(CONFIG);
    let d = t.path();
    let o = ccma(
        d,
        &[
            "eval",
            "--config",
            "run.toml",
            "--baseline",
            "das",
            "--out",
            "das",
            "--grid-deg",
            "2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = String::from_utf8(read(d, "das/beampattern_1000.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    // rows anchored on the 45° DoA: 1°, 3°, …, 89°
    assert_eq!(lines.len(), 1 + 45);
    assert_eq!(lines[0].split(',').count(), 1 + 180);
    assert!(d.join("das/beampattern_6000.csv").is_file());
    let metrics = String::from_utf8(read(d, "das/metrics.csv")).unwrap();
    let wng: Vec<f64> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(wng.iter().all(|w| (w - 10.0 * 145f64.log10()).abs() < 1e-5));
}

#[test]
fn compare_writes_table() {
    let t = setup(CONFIG);
    let d = t.path();
    let o = ccma(d, &["compare", "--config", "run.toml", "--out", "cmp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(read(d, "cmp/compare.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(d.join("cmp/das_beampattern_1000.csv").is_file());
    assert!(d.join("cmp/params.json").is_file());
}

fn l3_config() -> String {
    CONFIG.replace("frequencies_hz = [1000, 3000, 6000]", "frequencies_hz = [2000, 3000]")
        + "[loss]\nvariant = \"L3\"\n"
}

#[test]
fn alpha_sweep_makes_one_directory_per_point() {
    let t = setup(&l3_config());
    let d = t.path();
    fs::write(d.join("sweep.toml"), "[values]\nalpha = [0, 0.25, 0.5, 0.75, 1]\n").unwrap();
    let o = ccma(
        d,
        &[
            "sweep",
            "--config",
            "run.toml",
            "--sweep",
            "sweep.toml",
            "--out",
            "sw",
            "--workers",
            "2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..5 {
        assert!(d.join(format!("sw/point_{i:03}/metrics.csv")).is_file());
    }
    assert!(!d.join("sw/point_005").exists());
    let summary = String::from_utf8(read(d, "sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    let alphas: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(alphas, ["0", "0.25", "0.5", "0.75", "1"]);
}

#[test]
fn lambda3_sweep_makes_four_directories() {
    let t = setup(&l3_config());
    let d = t.path();
    fs::write(
        d.join("sweep.toml"),
        "[values]\nalpha = [1]\nlambda3 = [0.001, 0.005, 0.01, 0.05]\n",
    )
    .unwrap();
    let o = ccma(
        d,
        &["sweep", "--config", "run.toml", "--sweep", "sweep.toml", "--out", "sw"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dirs = fs::read_dir(d.join("sw"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 4);
}

#[test]
fn bad_sweeps_are_validation_errors() {
    let t = setup(&l3_config());
    let d = t.path();
    for (spec, needle) in [
        ("[values]\nalpha = []\n", "values.alpha"),
        ("[values]\nbeta = [1]\n", "values.beta"),
    ] {
        fs::write(d.join("sweep.toml"), spec).unwrap();
        let o = ccma(
            d,
            &["sweep", "--config", "run.toml", "--sweep", "sweep.toml", "--out", "sw"],
        );
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains(needle), "{}", stderr(&o));
    }
}

#[test]
fn validation_failures_exit_with_one() {
    let t = setup(&CONFIG.replace("frequencies_hz = [1000, 3000, 6000]", "frequencies_hz = []"));
    let d = t.path();
    let o = ccma(d, &["design", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frequencies_hz"));
    let o = ccma(d, &["design", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_command_passes() {
    let t = tempfile::tempdir().unwrap();
    let o = ccma(t.path(), &["gradcheck", "--points", "2", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}
