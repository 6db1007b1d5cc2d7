//! End-to-end checks of the binary: exit codes, output files, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use game_colocate::output::read_trace;
use game_colocate::OUT_ENV;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_game-colocate"));
    c.env_remove(OUT_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn noise_free(dir: &Path) -> String {
    let text = include_str!("../../sim/scenarios/planar4.scn")
        .replace("sensor_noise = on", "sensor_noise = off")
        .replace("init_translation_error = 1.8", "init_translation_error = 0")
        .replace("init_rotation_error = 0.1", "init_rotation_error = 0");
    let path = dir.join("exact.scn");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn selftest_passes_and_catches_an_injected_fault() {
    let ok = run(&["selftest"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = run(&["selftest", "--inject-fault", "flip-f"]);
    assert_ne!(code(&bad), 0);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_with_2() {
    assert_eq!(code(&run(&["run", "--scenario", "no/such/file.scn"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.scn");
    fs::write(&path, "game-colocate-scenario 1\nn = four\n").unwrap();
    assert_eq!(
        code(&run(&["run", "--scenario", path.to_str().unwrap()])),
        2
    );
    assert_eq!(code(&run(&["compare", "--seeds", "3..1"])), 2);
    // clap's own usage errors share the code
    assert_eq!(code(&run(&["run", "--filter", "sideways"])), 2);
}

#[test]
fn compare_fails_below_its_tolerance() {
    let args = ["compare", "--duration", "1", "--seeds", "1,2"];
    assert_eq!(code(&run(&args)), 0);
    let strict = run(&[&args[..], &["--tol", "0"]].concat());
    assert_eq!(code(&strict), 1);
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run(&[
            "run",
            "--duration",
            "3",
            "--filter",
            "both",
            "--csv",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    for name in ["errors.csv", "errors_decoupled.csv"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn environment_overrides_out_flag() {
    let (flag, env) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = bin()
        .args([
            "run",
            "--duration",
            "1",
            "--csv",
            "--plot",
            "--out",
            flag.path().to_str().unwrap(),
        ])
        .env(OUT_ENV, env.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(env.path().join("errors.csv").exists());
    assert!(env.path().join("errors.svg").exists());
    assert!(!flag.path().join("errors.csv").exists());
}

#[test]
fn plot_subcommand_renders_a_written_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        code(&run(&["run", "--duration", "2", "--csv", "--out", d])),
        0
    );
    let svg = dir.path().join("again.svg");
    let csv = dir.path().join("errors.csv");
    let out = run(&["plot", csv.to_str().unwrap(), "-o", svg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn exact_sensors_and_exact_start_keep_the_error_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scn = noise_free(dir.path());
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "run",
        "--scenario",
        &scn,
        "--duration",
        "10",
        "--filter",
        "both",
        "--csv",
        "--out",
        d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["errors.csv", "errors_decoupled.csv"] {
        let trace = read_trace(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!(trace.len(), 101);
        let worst = trace.iter().map(|&(_, e)| e).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{name}: {worst:e}");
    }
}
