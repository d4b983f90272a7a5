//! End-to-end runs of the `gsp4lab` binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gsp4lab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gsp4lab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

const SMALL: &str = r#"
primes = [2, 3]
valuation_window = [-2, 1]
residue_precision = 4
region_points_per_cell = 1
membership_samples = 200
seed = 11
"#;

#[test]
fn identities_example_exits_zero() {
    let out = bin().args(["verify-identities", "--primes", "2,3,5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("local factors: 9/9 exact identities hold"), "{text}");
}

#[test]
fn cosets_example() {
    let out = bin().args(["verify-cosets", "--p", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("720 elements classified, 8/4/4 labels"));
}

#[test]
fn reports_are_byte_identical_apart_from_timestamp() {
    let cfg = scratch("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut bodies = Vec::new();
    for run in 0..2 {
        let path = scratch(&format!("report{run}.json"));
        let status = bin()
            .args(["verify-regions", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&path)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["body"]["schema_version"], 1);
        assert!(v["generated_at"].is_u64());
        bodies.push(serde_json::to_string(&v["body"]).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn thread_count_does_not_change_the_report() {
    let cfg = scratch("threads.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut bodies = Vec::new();
    for threads in ["1", "3"] {
        let out = bin()
            .env("GSP4LAB_THREADS", threads)
            .args(["verify-closed-forms", "--json", "--config"])
            .arg(&cfg)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        bodies.push(v["body"].clone());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn failing_check_exits_one_with_witnesses() {
    // A cutoff of 1 leaves a tail bound far above the oracle tolerance.
    let out = bin().args(["oracle", "--primes", "3", "--cutoff", "1", "--json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["body"]["passed"], false);
    assert!(!v["body"]["sections"][0]["witnesses"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bin().args(["oracle", "--primes", "4"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().args(["oracle", "--nu", "1"]).status().unwrap().code(), Some(2));
    assert_eq!(bin().env("GSP4LAB_THREADS", "zero").arg("sato-tate").status().unwrap().code(), Some(2));
    let bad = scratch("bad.toml");
    std::fs::write(&bad, "valuation_window = [3, 1]\n").unwrap();
    assert_eq!(bin().arg("verify-regions").arg("--config").arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(2));
}
