//! End-to-end acceptance check for the binary: the full file-based pipeline
//! must be deterministic, byte for byte, across repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn check(tag: &str, ok: bool, details: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {tag}: {status} — {details}");
    assert!(ok, "acceptance {tag} failed: {details}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fplint"))
}

const CONFIG: &str = r#"{
  "seed": 1,
  "n_humans": 150,
  "n_bots": 250,
  "requests_per_identity": {"min": 2, "max": 5},
  "bot_alteration": {
    "attrs_altered": ["screen.resolution", "touch.support", "hardware.concurrency", "device.memory"],
    "independent": true,
    "alter_prob": 0.4,
    "geo_mismatch_prob": 0.1,
    "cookie_retention_prob": 0.8
  },
  "baseline_verdict_model": {
    "evasion_prob_given_altered": {
      "svc_a": {
        "screen.resolution": 0.5,
        "touch.support": 0.5,
        "hardware.concurrency": 0.5,
        "device.memory": 0.5
      }
    },
    "base_evasion": {"svc_a": 0.1}
  }
}"#;

/// Runs synth → ingest → discover → compile → detect → eval into `dir`,
/// with every seed pinned, and returns the artifact paths in order.
fn run_pipeline(dir: &Path, config: &Path) -> Vec<PathBuf> {
    let path = |name: &str| dir.join(name);
    let raw = path("raw.jsonl");
    let records = path("records.jsonl");
    let reports = path("reports.json");
    let rules = path("rules.txt");
    let decisions = path("decisions.jsonl");
    let state = path("state.json");
    let report = path("report.json");

    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth".into(),
            "--config".into(),
            config.display().to_string(),
            "--seed".into(),
            "20260814".into(),
            "--out".into(),
            raw.display().to_string(),
        ],
        vec![
            "ingest".into(),
            "--input".into(),
            raw.display().to_string(),
            "--out".into(),
            records.display().to_string(),
        ],
        vec![
            "discover".into(),
            "--records".into(),
            records.display().to_string(),
            "--out".into(),
            reports.display().to_string(),
        ],
        vec![
            "compile".into(),
            "--findings".into(),
            reports.display().to_string(),
            "--out".into(),
            rules.display().to_string(),
        ],
        vec![
            "detect".into(),
            "--records".into(),
            records.display().to_string(),
            "--rules".into(),
            rules.display().to_string(),
            "--state-out".into(),
            state.display().to_string(),
            "--out".into(),
            decisions.display().to_string(),
        ],
        vec![
            "eval".into(),
            "--records".into(),
            records.display().to_string(),
            "--decisions".into(),
            decisions.display().to_string(),
            "--split".into(),
            "0.8".into(),
            "--seed".into(),
            "20260814".into(),
            "--out".into(),
            report.display().to_string(),
        ],
    ];
    for step in &steps {
        let output = bin().args(step).arg("--quiet").output().expect("spawn fplint");
        assert!(
            output.status.success(),
            "step {:?} failed: {}",
            step[0],
            String::from_utf8_lossy(&output.stderr)
        );
    }
    vec![raw, records, reports, rules, decisions, state, report]
}

#[test]
fn acceptance_08_pipeline_is_byte_deterministic() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("config.json");
    fs::write(&config, CONFIG).expect("write config");

    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");
    fs::create_dir_all(&dir_a).unwrap();
    fs::create_dir_all(&dir_b).unwrap();

    let artifacts_a = run_pipeline(&dir_a, &config);
    let artifacts_b = run_pipeline(&dir_b, &config);

    let mut identical = 0usize;
    let mut mismatched = Vec::new();
    for (a, b) in artifacts_a.iter().zip(&artifacts_b) {
        let bytes_a = fs::read(a).expect("read artifact");
        let bytes_b = fs::read(b).expect("read artifact");
        assert!(!bytes_a.is_empty(), "{} is empty", a.display());
        if bytes_a == bytes_b {
            identical += 1;
        } else {
            mismatched.push(a.file_name().unwrap().to_string_lossy().into_owned());
        }
    }

    check(
        "08 pipeline determinism",
        mismatched.is_empty(),
        &format!(
            "{identical}/{} artifacts byte-identical across two seeded runs{}",
            artifacts_a.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!(" (differs: {})", mismatched.join(", "))
            }
        ),
    );
}

#[test]
fn exit_codes_distinguish_usage_from_data_errors() {
    let help = bin().arg("--help").output().expect("spawn");
    assert_eq!(help.status.code(), Some(0), "--help exits 0");

    let usage = bin().arg("detect").output().expect("spawn");
    assert_eq!(usage.status.code(), Some(1), "missing required arg exits 1");

    let data = bin()
        .args(["ingest", "--input", "/nonexistent/records.jsonl"])
        .output()
        .expect("spawn");
    assert_eq!(data.status.code(), Some(2), "unreadable input exits 2");

    let dir = tempfile::tempdir().expect("tempdir");
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "this is not json\n").unwrap();
    let parse = bin()
        .args(["ingest", "--input"])
        .arg(&bad)
        .output()
        .expect("spawn");
    assert_eq!(parse.status.code(), Some(2), "malformed line exits 2");
    assert!(
        String::from_utf8_lossy(&parse.stderr).contains("1 of 1 lines"),
        "data error names the failing line count"
    );
}

#[test]
fn outputs_default_to_stdout_and_the_digest_to_stderr() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("config.json");
    fs::write(&config, CONFIG).expect("write config");

    let output = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .output()
        .expect("spawn");
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout.clone()).expect("utf8 stdout");
    let lines = stdout.lines().count();
    assert!(
        (2 * 400..=5 * 400).contains(&lines),
        "400 identities at 2–5 requests each cannot yield {lines} records"
    );
    let stderr = String::from_utf8(output.stderr).expect("utf8 stderr");
    assert!(
        stderr.lines().any(|l| l.starts_with("config sha256 ")),
        "digest line missing from stderr: {stderr:?}"
    );

    let quiet = bin()
        .args(["synth", "--quiet", "--config"])
        .arg(&config)
        .output()
        .expect("spawn");
    assert!(quiet.status.success());
    assert!(quiet.stderr.is_empty(), "--quiet silences stderr");
    assert_eq!(quiet.stdout, output.stdout, "--quiet does not change stdout");
}
