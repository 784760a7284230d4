use std::path::PathBuf;
use std::process::{Command, Output};

fn mechmix(args: &[&str], dir: &PathBuf) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mechmix")).args(args).current_dir(dir).output().expect("spawn mechmix")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mechmix-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn selftest_passes() {
    let dir = scratch("selftest");
    let o = mechmix(&["selftest"], &dir);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn usage_errors_exit_one() {
    let dir = scratch("usage");
    assert_eq!(mechmix(&["bogus"], &dir).status.code(), Some(1));
    assert_eq!(mechmix(&["sweep", "--preset", "nope"], &dir).status.code(), Some(1));
    assert_eq!(mechmix(&["generate", "--config", "missing.toml"], &dir).status.code(), Some(1));
    std::fs::write(dir.join("bad.toml"), "noise_sigmaa = 0.1\n").unwrap();
    assert_eq!(mechmix(&["generate", "--config", "bad.toml"], &dir).status.code(), Some(1));
    assert_eq!(mechmix(&["--help"], &dir).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = scratch("runtime");
    let o = mechmix(&["recover", "--input", "nope.csv", "--basis", "nope.txt", "--output", "r.csv"], &dir);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_then_recover() {
    let dir = scratch("roundtrip");
    let o = mechmix(&["generate", "--seeds", "3", "--out", "g"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(dir.join("g/table2_seed3_encoded.csv")).unwrap();
    assert_eq!(mechmix(&["generate", "--seeds", "3", "--out", "g"], &dir).status.code(), Some(0));
    assert_eq!(first, std::fs::read(dir.join("g/table2_seed3_encoded.csv")).unwrap());

    let o = mechmix(
        &[
            "recover",
            "--input",
            "g/table2_seed3_encoded.csv",
            "--basis",
            "g/table2_seed3_basis.txt",
            "--output",
            "rec.csv",
            "--smoothing",
            "tv",
            "--calibrate-from",
            "g/table2_seed3_trajectory.csv",
        ],
        &dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.join("rec.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("t,alpha_raw_0"));
    assert_eq!(lines.count(), 200);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = scratch("sweep");
    let o = mechmix(&["sweep", "--preset", "table2", "--axis", "noise_sigma", "--values", "0.05,0.1,0.3", "--seeds", "0,1", "--out", "s"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.join("s/table2_sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("noise_sigma,n,"));
    let runs = std::fs::read_to_string(dir.join("s/table2_sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 7);
    assert!(dir.join("s/table2_sweep.csv.meta").exists());
}

#[test]
fn diagnose_and_validate_bounds() {
    let dir = scratch("diagnose");
    let o = mechmix(&["diagnose", "--seeds", "0", "--out", "d"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.join("d/table2_seed0_diagnostics.txt")).unwrap();
    for key in ["snr_eff:", "bound_violations:", "ks_p_value:", "verdict:"] {
        assert!(report.contains(key), "missing {key}");
    }
    std::fs::write(dir.join("small.toml"), "seeds = [0]\nsweep_axis = \"noise_sigma\"\nsweep_values = [0.1]\n").unwrap();
    let o = mechmix(&["validate-bounds", "--config", "small.toml"], &dir);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().last(), Some("violations: 0"));
}
