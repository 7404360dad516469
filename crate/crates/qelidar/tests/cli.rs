//! Behavioural tests of the command-line interface, run against the real
//! binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qelidar"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary spawns");
    assert!(
        out.status.success(),
        "`qelidar {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg = config("detection_33db.toml");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "run",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let files_a = read_dir_files(&out_a);
    let files_b = read_dir_files(&out_b);
    assert!(!files_a.is_empty());
    assert_eq!(files_a.len(), files_b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in files_a.iter().zip(&files_b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between reruns");
    }
}

#[test]
fn missing_config_names_the_path() {
    let out = bin()
        .args(["run", "/nonexistent/qelidar.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/nonexistent/qelidar.toml"),
        "stderr does not name the path: {stderr}"
    );
}

#[test]
fn broken_config_reports_parse_context() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.toml");
    std::fs::write(&path, "kind = \"detection\"\nseed = \"not a number\"\n").unwrap();
    let out = bin()
        .args(["run", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("broken.toml"), "{stderr}");
    assert!(stderr.contains("seed"), "{stderr}");
}

#[test]
fn oracle_check_prints_table_and_exits_zero() {
    let out = run_ok(&[
        "oracle-check",
        "--sets",
        "6",
        "--windows",
        "200000",
        "--seed",
        "3",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("parameter set"), "{stdout}");
    assert!(stdout.contains("detection_33db"), "{stdout}");
    assert!(stdout.contains("worst deviation"), "{stdout}");
}

#[test]
fn report_recomputes_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "run",
        config("detection_33db.toml").to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let out = run_ok(&["report", run_dir.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("summary matches"), "{stdout}");
    assert!(stdout.contains("phi_single"), "{stdout}");
}

#[test]
fn report_rejects_tampered_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "run",
        config("detection_33db.toml").to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    let summary_path = run_dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).unwrap();
    let tampered = text.replacen("\"phi_ci_single\":", "\"phi_ci_single\": 0.999, \"x\":", 1);
    assert_ne!(text, tampered);
    std::fs::write(&summary_path, tampered).unwrap();
    let out = bin()
        .args(["report", run_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success(), "tampered summary must fail");
}

#[test]
fn roc_subcommand_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&[
        "roc",
        config("detection_33db.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let table = std::fs::read_to_string(tmp.path().join("roc.csv")).unwrap();
    assert!(table.starts_with("threshold,pfa_qi,pd_qi,pfa_ci,pd_ci"));
    assert!(table.lines().count() > 100);
}

#[test]
fn calibrate_subcommand_reports_estimates() {
    let out = run_ok(&[
        "calibrate",
        config("detection_33db.toml").to_str().unwrap(),
        "--seed",
        "5",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for param in ["eta_s", "eta_i", "xi", "beta", "gamma"] {
        assert!(stdout.contains(param), "missing {param} in:\n{stdout}");
    }
    assert!(stdout.contains("ground truth"), "{stdout}");
}

#[test]
fn json_format_emits_json_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "run",
        config("detection_33db.toml").to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(run_dir.join("measurements.json").exists());
    assert!(!run_dir.join("measurements.csv").exists());
    let text = std::fs::read_to_string(run_dir.join("measurements.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).expect("valid json");
    assert!(value.as_array().map_or(0, |a| a.len()) > 100);
}
