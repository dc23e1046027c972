#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcpm_cli::RunConfig;
use mcpm_core::{Dims, McpmParams, ProbeParams};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mcpm"));
    c.env_remove("MCPM_OUT_DIR");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Two short token chains meeting at the centre plus a few strays.
pub fn write_points(dir: &Path) -> PathBuf {
    let mut s = String::from("surface\tx\ty\tz\n");
    for i in 0..12 {
        let t = i as f32 / 11.0;
        writeln!(s, "a{i}\t{}\t0.5\t0.5", 0.2 + 0.6 * t).unwrap();
        writeln!(s, "b{i}\t0.5\t{}\t0.5", 0.2 + 0.6 * t).unwrap();
    }
    for (i, p) in [[0.2, 0.2, 0.8], [0.8, 0.8, 0.2], [0.25, 0.75, 0.3]].iter().enumerate() {
        writeln!(s, "stray{i}\t{}\t{}\t{}", p[0], p[1], p[2]).unwrap();
    }
    let path = dir.join("points.tsv");
    std::fs::write(&path, s).unwrap();
    path
}

pub fn small_mcpm() -> McpmParams {
    McpmParams {
        n_agents: 10_000,
        n_steps: 60,
        grid_res: Dims::cube(32),
        sense_distance: 0.06,
        sense_angle: 0.4,
        move_distance: 0.02,
        trace_window: 20,
        ..McpmParams::default()
    }
}

pub fn small_probe() -> ProbeParams {
    ProbeParams {
        n_probes: 60,
        n_steps: 120,
        sense_distance: 0.06,
        sense_angle: 1.0,
        move_distance: 0.01,
        discovery_radius: 0.02,
        ..ProbeParams::default()
    }
}

/// Fits the fixture into `dir/run` through the library.
pub fn fitted_run(dir: &Path) -> (RunConfig, PathBuf) {
    let points = write_points(dir);
    let cfg = RunConfig {
        points: Some(points),
        mcpm: small_mcpm(),
        probe: small_probe(),
        seed: Some(11),
        out: Some(dir.join("run")),
        ..RunConfig::default()
    };
    let out = mcpm_cli::commands::cmd_fit(&cfg).unwrap();
    (cfg, out)
}

pub fn small_flags() -> Vec<String> {
    [
        "--agents", "10000", "--steps", "60", "--grid", "32", "--sense-distance", "0.06", "--sense-angle", "0.4",
        "--move-distance", "0.02", "--trace-window", "20",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn probe_flags() -> Vec<String> {
    [
        "--probes", "60", "--probe-steps", "120", "--probe-sense-distance", "0.06", "--probe-sense-angle", "1.0",
        "--probe-move-distance", "0.01", "--discovery-radius", "0.02",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
