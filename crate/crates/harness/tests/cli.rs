use std::path::Path;
use std::process::{Command, Output};

use crw_harness::run::RunManifest;

fn crw(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crw"))
        .args(args)
        .current_dir(dir)
        .env_remove("CRW_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = "experiment = \"simulate\"\nt_ladder = [200.0, 400.0]\nreplicates = 12\nmaster_seed = 3\n";

#[test]
fn run_then_replay_every_replicate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", SMALL);
    let out = crw(&["simulate", "--config", &cfg, "--out", "o", "--workers", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let m = manifest(&tmp.path().join("o"));
    assert!(m.complete);
    assert_eq!(m.workers, 2);
    assert_eq!(m.seeds.len(), 24);
    assert_eq!(m.replicates_total, 24);
    assert_eq!(m.outputs, vec!["summary.csv", "reports.json"]);

    for (rung, rep) in [(0, 0), (0, 11), (1, 5)] {
        let out = crw(
            &["replay", "--manifest", "o/manifest.json", "--rung", &rung.to_string(), "--replicate", &rep.to_string()],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("matches summary.csv"));
    }
    let out = crw(&["replay", "--manifest", "o/manifest.json", "--rung", "2"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn replay_detects_a_tampered_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", SMALL);
    assert!(crw(&["simulate", "--config", &cfg, "--out", "o"], tmp.path()).status.success());
    let path = tmp.path().join("o/summary.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replacen("0,200.0,", "0,200.0,99999", 1);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = crw(&["replay", "--manifest", "o/manifest.json"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn seed_flag_overrides_config_and_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sim.toml", SMALL);
    for (dir, seed) in [("a", "3"), ("b", "4"), ("c", "3")] {
        assert!(crw(&["simulate", "--config", &cfg, "--out", dir, "--seed", seed], tmp.path()).status.success());
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("summary.csv")).unwrap();
    assert_eq!(read("a"), read("c"));
    assert_ne!(read("a"), read("b"));
    assert_eq!(manifest(&tmp.path().join("b")).config.master_seed, 4);
    assert_ne!(manifest(&tmp.path().join("a")).config_hash, manifest(&tmp.path().join("b")).config_hash);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("gamma = 0.6\n", "gamma"),
        ("replicates = 10\nbogus = 1\n", "line 2"),
        ("gamma = 0.4\nbeta = 0.5\n", "beta"),
        ("replicates = 0\n", "replicates"),
        ("experiment = \"range\"\n", "`coupling` was requested"),
    ];
    for (i, (text, needle)) in cases.into_iter().enumerate() {
        let cfg = write(tmp.path(), &format!("bad{i}.toml"), text);
        let out = crw(&["coupling", "--config", &cfg, "--out", "o"], tmp.path());
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{text}: {err}");
        assert!(err.contains(needle), "{text}: {err}");
    }
    assert!(!tmp.path().join("o").exists());
    let out = crw(&["range", "--config", "missing.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn capped_replicates_degrade_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "cap.toml",
        "experiment = \"range\"\nt_ladder = [500.0]\nreplicates = 10\njump_cap_factor = 0.1\nwrite_trajectories = true\n",
    );
    let out = crw(&["range", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(&tmp.path().join("o"));
    assert!(m.complete);
    assert_eq!(m.replicates_flagged, 10);
    let summary = std::fs::read_to_string(tmp.path().join("o/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",true")));
    // partial paths are still written, each stopping at the cap
    let traj = std::fs::read_to_string(tmp.path().join("o/trajectories.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 10 * 50);
}

#[test]
fn workers_come_from_flag_then_config_then_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "w.toml", &format!("{SMALL}workers = 3\noutput_dir = \"from-config\"\n"));
    assert!(crw(&["simulate", "--config", &cfg], tmp.path()).status.success());
    assert_eq!(manifest(&tmp.path().join("from-config")).workers, 3);
    assert!(crw(&["simulate", "--config", &cfg, "--workers", "2"], tmp.path()).status.success());
    assert_eq!(manifest(&tmp.path().join("from-config")).workers, 2);

    let plain = write(tmp.path(), "p.toml", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_crw"))
        .args(["simulate", "--config", &plain, "--out", "env"])
        .current_dir(tmp.path())
        .env("CRW_WORKERS", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(manifest(&tmp.path().join("env")).workers, 5);
}

#[test]
fn env_tail_rows_replay_by_length_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", "experiment = \"env-tail\"\nlengths = [50.0, 500.0]\nreplicates = 500\n");
    assert!(crw(&["env-tail", "--config", &cfg, "--out", "o"], tmp.path()).status.success());
    let out = crw(&["replay", "--manifest", "o/manifest.json", "--rung", "1"], tmp.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("matches summary.csv"));
    let summary = std::fs::read_to_string(tmp.path().join("o/summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "length,anchor_mode,epsilon,exceedances,samples,freq,ci_low,ci_high");
    assert_eq!(summary.lines().count(), 5);
}
