use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CLAUDE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/claude_counts.csv");
const GEMINI: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/gemini_counts.csv");

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balance-lab")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn potential(csv: &str, state: &str) -> f64 {
    let line = csv.lines().find(|l| l.starts_with(&format!("{state},"))).unwrap();
    line.split(',').nth(1).unwrap().parse().unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_recovers_the_published_potentials() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["fit", "--counts", CLAUDE, "--policy", "fixed:4000", "--anchor", "ATTITUDE"]);
    assert!((potential(&out, "PERSONAL") - 4.07).abs() < 0.01, "{out}");
    assert!((potential(&out, "PROBLEM") - 5.18).abs() < 0.01, "{out}");
    assert!(out.contains("BUZZY,inf,true"));
}

#[test]
fn expected_action_json() {
    let dir = TempDir::new().unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(dir.path(), &["expected-action", "--sigma", "2.30"])).unwrap();
    assert!((v["approx"].as_f64().unwrap() - 0.245).abs() < 5e-4, "{v}");
    assert!(v["exact"].as_f64().unwrap() < v["approx"].as_f64().unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(bin(dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(bin(dir.path(), &["fit"]).status.code(), Some(2));
}

#[test]
fn domain_errors_are_one_json_line() {
    let dir = TempDir::new().unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["fit", "--counts", "missing.csv"], "MISSING_INPUT"),
        (&["fit", "--counts", CLAUDE, "--anchor", "NOWHERE"], "UNKNOWN_ANCHOR"),
        (&["fit", "--counts", CLAUDE, "--policy", "sometimes"], "BAD_POLICY_PARAM"),
        (&["vote", "--t", "0.1", "--m", "10", "--n", "2"], "BAD_CONFIG"),
    ];
    for (args, code) in cases {
        let out = bin(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert_eq!(stderr.lines().count(), 1, "{stderr}");
        let v: serde_json::Value = serde_json::from_str(&stderr).unwrap();
        assert_eq!(v["error"]["code"], code, "{stderr}");
    }
}

#[test]
fn non_convergence_still_writes_the_partial_fit() {
    let dir = TempDir::new().unwrap();
    let out = bin(dir.path(), &["fit", "--counts", CLAUDE, "--max-iterations", "2", "--out", "v.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NO_CONVERGENCE"));
    assert!(fs::read_to_string(dir.path().join("v.csv")).unwrap().starts_with("state,beta_v"));
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| ["report", "--counts", GEMINI, "--policy", "fixed:1538", "--deterministic", "--out-dir", out];
    ok(dir.path(), &args("a"));
    ok(dir.path(), &args("b"));
    let mut names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8, "{names:?}");
    for name in names {
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = fs::read(dir.path().join("b").join(&name)).unwrap();
        // config.resolved.json records the differing output paths
        if name != "config.resolved.json" {
            assert_eq!(a, b, "{name:?}");
        }
    }
    assert!(json(dir.path().join("a/config.resolved.json")).get("generated_at").is_none());
}

#[test]
fn timestamps_appear_without_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["estimate", "--counts", CLAUDE, "--out", "k/kernel.csv"]);
    let cfg = json(dir.path().join("k/config.resolved.json"));
    assert!(cfg["generated_at"].as_str().unwrap().contains('T'));
    assert_eq!(cfg["command"], "estimate");
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("balance-lab.json"), r#"{"kernel_policy": "fixed:4000", "beta": 2.0, "seed": 9}"#).unwrap();
    ok(dir.path(), &["estimate", "--counts", CLAUDE, "--beta", "3", "--out", "o/k.csv"]);
    let cfg = json(dir.path().join("o/config.resolved.json"));
    assert_eq!(cfg["kernel_policy"], "fixed:4000");
    assert_eq!(cfg["beta"], 3.0);
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["tolerance"], 1e-8);
    assert_eq!(cfg["config_file"], "balance-lab.json");

    fs::write(dir.path().join("bad.json"), r#"{"betta": 1}"#).unwrap();
    let out = bin(dir.path(), &["--config", "bad.json", "estimate", "--counts", CLAUDE]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BAD_CONFIG"));
}

#[test]
fn failed_runs_leave_no_half_written_files() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("keep.csv"), "previous").unwrap();
    let out = bin(dir.path(), &["fit", "--counts", CLAUDE, "--anchor", "NOWHERE", "--out", "keep.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(fs::read_to_string(dir.path().join("keep.csv")).unwrap(), "previous");
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn simulate_then_report_round_trip() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("v.csv"), "state,beta_v,divergent\nATTITUDE,0,false\nDISCIPLINE,1,false\n").unwrap();
    let sim = ["simulate-words", "--seed-word", "ATTITUDE", "--n-samples", "4000", "--potentials", "v.csv", "--seed", "5"];
    ok(dir.path(), &[&sim[..], &["--deterministic", "--out", "a.jsonl"]].concat());
    ok(dir.path(), &[&sim[..], &["--deterministic", "--out", "b.jsonl"]].concat());
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());

    ok(dir.path(), &["report", "--log", "a.jsonl", "--policy", "attempts", "--out-dir", "r"]);
    let pots = fs::read_to_string(dir.path().join("r/potentials.csv")).unwrap();
    let gap = potential(&pots, "DISCIPLINE") - potential(&pots, "ATTITUDE");
    assert!((gap - 1.0).abs() < 0.2, "{pots}");
    let summary = json(dir.path().join("r/summary.json"));
    assert_eq!(summary["pairs"]["n_pairs"], 1);
}

#[test]
fn score_expressions_jsonl() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("e.txt"), "(a+b)*c\nx = 1\n").unwrap();
    let out = ok(dir.path(), &["score-expressions", "--input", "e.txt"]);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["expr"], "x = 1");
    assert!(lines.iter().all(|l| l["score"].as_f64().unwrap().is_finite()));
}

#[test]
fn full_precision_round_trips() {
    let dir = TempDir::new().unwrap();
    let short = ok(dir.path(), &["fit", "--counts", CLAUDE, "--policy", "fixed:4000", "--anchor", "ATTITUDE"]);
    let full = ok(dir.path(), &["--full-precision", "fit", "--counts", CLAUDE, "--policy", "fixed:4000", "--anchor", "ATTITUDE"]);
    assert!(short.contains("PERSONAL,4.07368,"));
    let exact = (3879f64 / 66.0).ln();
    assert!((potential(&full, "PERSONAL") - exact).abs() < 1e-6, "{full}");
}
