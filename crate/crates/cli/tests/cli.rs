use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn afc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("afc runs")
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(stdout.trim_end().lines().count(), 1, "summary is one line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn error_report(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"]["exit_code"], code);
    report
}

fn artifacts(summary: &Value, dir: &Path) -> Vec<PathBuf> {
    summary["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| dir.join(p.as_str().unwrap()))
        .collect()
}

/// Parses every declared artifact as JSON or as a CSV of numeric rows.
fn check_parses(path: &Path) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            serde_json::from_str::<Value>(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        Some("csv") => {
            let mut rows = text.lines().filter(|l| !l.starts_with('#'));
            let header = rows.next().expect("csv header");
            let columns = header.split(',').count();
            let mut n = 0;
            for row in rows {
                let cells: Vec<&str> = row.split(',').collect();
                assert_eq!(cells.len(), columns, "{}: {row}", path.display());
                assert!(
                    cells.iter().any(|c| c.parse::<f64>().is_ok()),
                    "{}: non-numeric row {row}",
                    path.display()
                );
                n += 1;
            }
            assert!(n > 0, "{} has no rows", path.display());
        }
        other => panic!("unexpected artifact type {other:?}"),
    }
}

const PUMP: &str = r#"
compare_continuous = true

[grid]
half_span_hz = 500e6
step_hz = 20e3

[probe]
center_hz = 1.5e6
bandwidth_hz = 0.8e6

[sequence]
n_loop = 10
in_loop_delay_s = 0.01
out_loop_delay_s = 0.0
mode = "interleaved"

[[sequence.pulses]]
center_hz = 1.5e6
bandwidth_hz = 1e6
duration_s = 0.002
rate_peak_per_s = 2000.0

[[sequence.pulses]]
center_hz = -1.5e6
bandwidth_hz = 1e6
duration_s = 0.002
rate_peak_per_s = 2000.0
"#;

const ECHO: &str = r#"
[grid]
half_span_hz = 100e6
step_hz = 10e3

[base]
kind = "comb"

[[windows]]
center = 0.0
bandwidth = 20e6
delta = 2e6
finesse = 3.0
depth = 3.3
background = 1.3

[trace]
dt_s = 2e-9
samples = 2000

[[pulses]]
t_center_s = 0.5e-6
fwhm_s = 100e-9
"#;

#[test]
fn efficiency_example() {
    let dir = TempDir::new().unwrap();
    let s = summary(&afc(dir.path(), &["efficiency", "--d", "3.3", "--F", "3", "--d0", "1.3"]));
    let eta = s["efficiency"].as_f64().unwrap();
    assert!((eta - 0.075).abs() < 1e-3, "{eta}");
    assert_eq!(s["command"], "efficiency");
    assert_eq!(s["status"], "ok");
}

#[test]
fn storage_time_example() {
    let dir = TempDir::new().unwrap();
    let s = summary(&afc(dir.path(), &["storage-time", "--delta", "2e6"]));
    assert!((s["storage_time_s"].as_f64().unwrap() - 5e-7).abs() < 1e-18);
}

#[test]
fn flags_override_file_values() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("eff.toml"), "d = 1.0\nfinesse = 3.0\nd0 = 0.0\n").unwrap();
    let from_file = summary(&afc(dir.path(), &["efficiency", "--config", "eff.toml"]));
    assert_eq!(from_file["d"], 1.0);
    let flagged = summary(&afc(dir.path(), &["efficiency", "--config", "eff.toml", "--d", "3.3", "--set", "d0=1.3"]));
    assert!((flagged["efficiency"].as_f64().unwrap() - 0.075).abs() < 1e-3);
}

#[test]
fn malformed_config_reports_location() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "d = 3.3\nfinesse = = 3\n").unwrap();
    let report = error_report(&afc(dir.path(), &["efficiency", "--config", "bad.toml"]), 2);
    let loc = &report["error"]["location"];
    assert_eq!(loc["line"], 2);
    assert!(loc["column"].as_u64().unwrap() >= 1);
    assert!(loc["file"].as_str().unwrap().ends_with("bad.toml"));
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("eff.toml"), "d = 3.3\nfinesse = 3.0\nd0 = 1.3\nfinese = 2\n").unwrap();
    error_report(&afc(dir.path(), &["efficiency", "--config", "eff.toml"]), 2);
    error_report(&afc(dir.path(), &["efficiency", "--config", "missing.toml"]), 2);
    error_report(&afc(dir.path(), &["tomo", "--table", "missing.csv"]), 2);
    error_report(&afc(dir.path(), &["no-such-command"]), 2);
}

#[test]
fn randomized_commands_require_a_seed() {
    let dir = TempDir::new().unwrap();
    error_report(&afc(dir.path(), &["scan", "--trials", "3"]), 2);
    error_report(&afc(dir.path(), &["polar", "--samples", "3"]), 2);
    error_report(&afc(dir.path(), &["tomo", "--noise-sigma", "0.01"]), 2);
}

#[test]
fn precondition_violation_exits_3() {
    let dir = TempDir::new().unwrap();
    let report = error_report(&afc(dir.path(), &["efficiency", "--d", "-1", "--F", "3", "--d0", "0"]), 3);
    assert_eq!(report["error"]["kind"], "precondition");
    error_report(&afc(dir.path(), &["storage-time", "--delta", "0"]), 3);
}

#[test]
fn fit_that_cannot_converge_exits_4() {
    let dir = TempDir::new().unwrap();
    let mut data = String::from("t_s,y\n");
    for i in 0..40 {
        data.push_str(&format!("{},{}\n", i as f64 * 0.1, if i % 2 == 0 { 1.0 } else { -1.0 }));
    }
    fs::write(dir.path().join("alternating.csv"), data).unwrap();
    let out = afc(dir.path(), &["fit", "--model", "exponential", "--data", "alternating.csv", "--n-terms", "2"]);
    let report = error_report(&out, 4);
    assert_eq!(report["error"]["kind"], "convergence");
    let best: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("afc-out/fit/fit.json")).unwrap()).unwrap();
    assert_eq!(best["converged"], false);
}

#[test]
fn every_command_writes_parseable_artifacts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("pump.toml"), PUMP).unwrap();
    fs::write(d.join("echo.toml"), ECHO).unwrap();
    let mut decay = String::from("t_s,y\n");
    for i in 0..100 {
        let t = 1e-3 * 15e3f64.powf(i as f64 / 99.0);
        decay.push_str(&format!("{t},{}\n", 0.6 * (-t / 0.01).exp() + 0.4 * (-t / 3.0).exp()));
    }
    fs::write(d.join("decay.csv"), decay).unwrap();

    let runs: &[&[&str]] = &[
        &["pump-sim", "--config", "pump.toml"],
        &["echo-sim", "--config", "echo.toml"],
        &["scan", "--seed", "3", "--trials", "12"],
        &["tomo", "--process", "random", "--seed", "5", "--noise-sigma", "0.01"],
        &["polar", "--configuration", "TILTED_HWP_SANDWICH", "--samples", "4", "--seed", "2"],
        &["fit", "--model", "exponential", "--data", "decay.csv", "--n-terms", "2"],
        &["physics", "--g", "2", "--b", "0.5", "--b", "1", "--temperature", "1.5"],
    ];
    for args in runs {
        let s = summary(&afc(d, args));
        let files = artifacts(&s, d);
        assert!(!files.is_empty(), "{args:?}");
        assert!(files.iter().any(|f| f.ends_with("metadata.json")));
        for f in &files {
            check_parses(f);
        }
    }

    let tomo = summary(&afc(d, &["tomo", "--table", "afc-out/tomo/table.csv", "--out", "re"]));
    assert!(tomo["residual"].as_f64().unwrap() < 1e-2);
}

fn artifact_bytes(dir: &Path, summary: &Value) -> Vec<(String, Vec<u8>)> {
    artifacts(summary, dir)
        .into_iter()
        .filter(|p| !p.ends_with("metadata.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("echo.toml"), ECHO).unwrap();
    let runs: &[&[&str]] = &[
        &["scan", "--seed", "11", "--trials", "8"],
        &["tomo", "--process", "random", "--seed", "4", "--noise-sigma", "0.02"],
        &["polar", "--configuration", "HWP_QWP_HWP", "--samples", "3", "--seed", "9"],
        &["echo-sim", "--config", "echo.toml"],
    ];
    for args in runs {
        let first: Vec<&str> = args.iter().copied().chain(["--out", "first"]).collect();
        let second: Vec<&str> = args.iter().copied().chain(["--out", "second"]).collect();
        let a = artifact_bytes(d, &summary(&afc(d, &first)));
        let b = artifact_bytes(d, &summary(&afc(d, &second)));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{args:?}");
        fs::remove_dir_all(d.join("first")).unwrap();
        fs::remove_dir_all(d.join("second")).unwrap();
    }
}

#[test]
fn help_exits_cleanly() {
    let dir = TempDir::new().unwrap();
    let out = afc(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["pump-sim", "echo-sim", "scan", "tomo", "polar", "fit", "physics", "efficiency", "storage-time"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
