//! End-to-end CLI tests: determinism, round trips, exit codes.

use std::path::Path;
use std::process::Command;

fn cqed() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cqed"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const BASE: &str = r#"
[params]
g = 3.0
gamma = 1.0
drive = 1.0
beta = { re = 0.2, im = 0.0 }
tol = 1e-8
"#;

#[test]
fn sample_is_deterministic_and_records_roundtrip() {
    let dir = std::env::temp_dir().join("cqed_cli_sample");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            "{BASE}
[sample]
n_traj = 3
seed = 42
dt = 0.005
t_total = 0.3
"
        ),
    );
    for out in ["a", "b"] {
        let status = cqed()
            .args([
                "sample",
                "--config",
                cfg.to_str().unwrap(),
                "--output",
                dir.join(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let rec_a = std::fs::read(dir.join("a/records.json")).unwrap();
    let rec_b = std::fs::read(dir.join("b/records.json")).unwrap();
    assert_eq!(rec_a, rec_b, "records differ across identical runs");
    let sum_a = std::fs::read(dir.join("a/sample_summary.csv")).unwrap();
    let sum_b = std::fs::read(dir.join("b/sample_summary.csv")).unwrap();
    assert_eq!(sum_a, sum_b);

    // a different seed changes the records
    let status = cqed()
        .args([
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.join("c").to_str().unwrap(),
            "--seed",
            "43",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let rec_c = std::fs::read(dir.join("c/records.json")).unwrap();
    assert_ne!(rec_a, rec_c);

    // the records file parses back
    let text = String::from_utf8(rec_a).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(parsed.as_array().unwrap().len() == 3);
}

#[test]
fn evolve_zero_time_single_row() {
    let dir = std::env::temp_dir().join("cqed_cli_evolve0");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            "{BASE}
[evolve]
t_total = 0.0
dt = 0.005
rho0 = \"steady\"
"
        ),
    );
    let status = cqed()
        .args([
            "evolve",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.join("evolve_series.csv")).unwrap();
    let series = cqed_homodyne::io::Series::from_csv(&text).unwrap();
    assert_eq!(series.rows.len(), 1);
    // steady-state observables: trace 1, Re<a> = 2E/gamma
    let trace = series.rows[0][1];
    let re_a = series.rows[0][5];
    assert!((trace - 1.0).abs() < 1e-9);
    assert!((re_a - 2.0).abs() < 1e-6);
}

#[test]
fn conditional_lambda_columns_cross_check() {
    let dir = std::env::temp_dir().join("cqed_cli_cond");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        r#"
[params]
g = 6.0
gamma = 1.0
drive = 2.0
beta = { re = 0.0, im = 0.8 }
tol = 1e-8

[conditional]
record = [2, 2]
dt_total = 0.3
"#,
    );
    let status = cqed()
        .args([
            "conditional",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.join("conditional.csv")).unwrap();
    let series = cqed_homodyne::io::Series::from_csv(&text).unwrap();
    let li = series.columns.iter().position(|c| c == "lambda1").unwrap();
    let lf = series
        .columns
        .iter()
        .position(|c| c == "lambda1_formula")
        .unwrap();
    let row = &series.rows[0];
    assert!(
        (row[li] - row[lf]).abs() < 1e-8,
        "block-trace lambda {} vs formula {}",
        row[li],
        row[lf]
    );
}

#[test]
fn exit_codes() {
    let dir = std::env::temp_dir().join("cqed_cli_exits");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    // config error: unknown key
    let bad = dir.join("bad.toml");
    write(&bad, &format!("{BASE}\nunknown_section = 1\n"));
    let status = cqed()
        .args(["verify", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // missing file is a config error too
    let status = cqed()
        .args(["evolve", "--config", dir.join("absent.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    // check failure: impossible tolerance
    let cfg = dir.join("failing.toml");
    write(
        &cfg,
        &format!(
            "{BASE}
[verify]
checks = [\"eigenratio\"]
tolerance = 0.0
"
        ),
    );
    let status = cqed()
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // numeric/truncation error: n_fock below the margin rule
    let cfg = dir.join("margin.toml");
    write(
        &cfg,
        r#"
[params]
g = 10.0
gamma = 1.0
drive = 3.0
n_fock = 16

[evolve]
t_total = 0.1
dt = 0.001
"#,
    );
    let status = cqed()
        .args([
            "evolve",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn verify_subset_passes_quickly() {
    let dir = std::env::temp_dir().join("cqed_cli_verify");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            "{BASE}
[verify]
checks = [\"eigenratio\", \"lemma2\", \"real-beta\"]
"
        ),
    );
    let out = cqed()
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = std::fs::read_to_string(dir.join("verify_report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed["all_pass"], serde_json::Value::Bool(true));
    assert_eq!(parsed["checks"].as_array().unwrap().len(), 3);
}
