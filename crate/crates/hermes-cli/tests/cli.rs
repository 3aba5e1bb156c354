//! Drive the built binary end to end: run, validate, report.

use std::fs;
use std::path::Path;
use std::process::Command;

fn hermes() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hermes"))
}

fn repo_scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn run_writes_trace_and_reports_and_exits_zero() {
    let out = tempdir();
    let output = hermes()
        .args([
            "run",
            &repo_scenario("testbed.toml"),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for file in ["trace.log", "report.txt", "records.jsonl"] {
        let path = out.join(file);
        assert!(path.exists(), "{file} missing");
        assert!(fs::metadata(&path).unwrap().len() > 0, "{file} empty");
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("Throughput at root"));
    assert!(report.contains("Inference cycles"));
    cleanup(&out);
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let out_a = tempdir();
    let out_b = tempdir();
    for out in [&out_a, &out_b] {
        let status = hermes()
            .args([
                "run",
                &repo_scenario("recovery.toml"),
                "--out",
                out.to_str().unwrap(),
                "--quiet",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["trace.log", "report.txt", "records.jsonl"] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
    cleanup(&out_a);
    cleanup(&out_b);
}

#[test]
fn seed_override_changes_the_trace() {
    let out_a = tempdir();
    let out_b = tempdir();
    for (out, seed) in [(&out_a, "1"), (&out_b, "2")] {
        let status = hermes()
            .args([
                "run",
                &repo_scenario("testbed.toml"),
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
                "--quiet",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(out_a.join("trace.log")).unwrap();
    let b = fs::read(out_b.join("trace.log")).unwrap();
    assert_ne!(a, b);
    cleanup(&out_a);
    cleanup(&out_b);
}

#[test]
fn validate_accepts_shipped_scenarios_and_rejects_broken_ones() {
    for scenario in ["testbed.toml", "recovery.toml"] {
        let output = hermes()
            .args(["validate", &repo_scenario(scenario)])
            .output()
            .unwrap();
        assert!(output.status.success(), "{scenario}");
        assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "ok");
    }

    // Duplicate MAC suffix: must list the field path and exit non-zero.
    let dir = tempdir();
    let broken = dir.join("broken.toml");
    let mut text = fs::read_to_string(repo_scenario("recovery.toml")).unwrap();
    text = text.replace("02:00:00:00:00:05", "02:00:00:00:00:01");
    fs::write(&broken, text).unwrap();
    let output = hermes()
        .args(["validate", broken.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("node[4].mac"), "{stdout}");
    assert!(stdout.contains("last two MAC bytes"), "{stdout}");
    cleanup(&dir);
}

#[test]
fn report_recomputes_from_trace_with_window() {
    let out = tempdir();
    let status = hermes()
        .args([
            "run",
            &repo_scenario("testbed.toml"),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let trace = out.join("trace.log");
    let full = hermes()
        .args(["report", trace.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(full.status.success());
    let full_text = String::from_utf8_lossy(&full.stdout).to_string();
    assert!(full_text.contains("Throughput at root (window 0.."));

    let windowed = hermes()
        .args([
            "report",
            trace.to_str().unwrap(),
            "--window",
            "0..30000",
        ])
        .output()
        .unwrap();
    assert!(windowed.status.success());
    let windowed_text = String::from_utf8_lossy(&windowed.stdout).to_string();
    assert!(windowed_text.contains("window 0..30000"));

    let bytes = |text: &str| -> u64 {
        text.lines()
            .find(|l| l.starts_with("total"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap()
    };
    assert!(bytes(&windowed_text) <= bytes(&full_text));
    cleanup(&out);
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "hermes-cli-test-{}-{:?}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn cleanup(dir: &Path) {
    let _ = fs::remove_dir_all(dir);
}
