use std::path::Path;
use std::process::{Command, Output};

use cse_lab::decompose::Representation;
use cse_lab::experiments::single_photon_representation;
use cse_lab::experiments::witness::run_witness;
use cse_lab::fock::FockDim;
use serde_json::Value;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cse-lab"));
    cmd.args(args).env_remove("CSE_LAB_DEFAULT_CUTOFF");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    if !dir.exists() {
        return vec![];
    }
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn witness_report_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let o = run(&["witness", "--n", "2000", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("witness.json"));
    for key in ["W0", "alpha0", "target", "mean", "excess_variance", "required_N"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["schema"], "cse-lab/1");
    assert_eq!(r["config"]["seed"], 7);
    assert!(r["version"].is_string());
    let runs = std::fs::read_to_string(out.join("witness.runs.jsonl")).unwrap();
    let first: Value = serde_json::from_str(runs.lines().next().unwrap()).unwrap();
    for key in ["seed", "N", "mean", "std_error", "variance_predicted", "variance_empirical"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn noon_three_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("n");
    let o = run(&["noon", "--N", "3", "--probes", "0,0.25,0.5,0.75,1", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("noon.csv")).unwrap();
    assert!(csv.contains("4/9"));
    assert!(csv.contains("-1/6"));
}

#[test]
fn empty_probe_grid_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = run(&["decompose", "--probes", "", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(files(&out).is_empty());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["status"], "error");
}

#[test]
fn bad_values_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    for args in [
        vec!["hom", "--eta", "1.5"],
        vec!["g2", "--f", "-0.1"],
        vec!["decompose", "--probes", "0,9"],
        vec!["noon", "--N", "0"],
        vec!["witness", "--cutoff", "1"],
    ] {
        let mut a = args.clone();
        a.extend(["--out", out.to_str().unwrap()]);
        let o = run(&a, &[]);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(files(&out).is_empty(), "{args:?}");
    }
}

#[test]
fn outputs_are_reproducible_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|n| tmp.path().join(n)).collect();
    let common = ["hom", "--n", "200000", "--seed", "11"];
    for (dir, threads) in dirs.iter().zip(["1", "1", "4"]) {
        let mut a = common.to_vec();
        a.extend(["--threads", threads, "--out", dir.to_str().unwrap()]);
        assert!(run(&a, &[]).status.success());
    }
    for name in files(&dirs[0]) {
        let x = std::fs::read(dirs[0].join(&name)).unwrap();
        assert_eq!(x, std::fs::read(dirs[1].join(&name)).unwrap(), "{name}");
        assert_eq!(x, std::fs::read(dirs[2].join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "seed = 3\neta = 0.7\nn = 5000\n").unwrap();
    let out = tmp.path().join("o");
    let o = run(&["hom", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("hom.json"));
    assert_eq!(r["config"]["seed"], 5);
    assert_eq!(r["config"]["detector"]["eta"], 0.7);
    assert_eq!(r["config"]["N_trials"], 5000);
}

#[test]
fn unknown_config_key_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "sede = 3\n").unwrap();
    let o = run(&["hom", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cutoff_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["decompose", "--out", out.to_str().unwrap()], &[("CSE_LAB_DEFAULT_CUTOFF", "35")]);
    assert!(o.status.success());
    assert_eq!(read_json(&out.join("decompose.json"))["config"]["cutoff"], 35);
    let o = run(&["decompose", "--cutoff", "32", "--out", out.to_str().unwrap()], &[("CSE_LAB_DEFAULT_CUTOFF", "35")]);
    assert!(o.status.success());
    assert_eq!(read_json(&out.join("decompose.json"))["config"]["cutoff"], 32);
    let o = run(&["decompose", "--out", out.to_str().unwrap()], &[("CSE_LAB_DEFAULT_CUTOFF", "abc")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saved_representation_gives_identical_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert!(run(&["decompose", "--out", out.to_str().unwrap()], &[]).status.success());
    let r = read_json(&out.join("decompose.json"));
    let saved = Representation::from_json(&r["representation"].to_string()).unwrap();
    let fresh = single_photon_representation(FockDim::new(30).unwrap()).unwrap();
    assert_eq!(saved.coefficients(), fresh.coefficients());
    assert_eq!(run_witness(&saved, 50_000, 7).unwrap(), run_witness(&fresh, 50_000, 7).unwrap());
}

#[test]
fn g2_csv_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = run(&["g2", "--points", "3", "--n", "20000", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("g2.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "theta,g2_true,g2_emulated,sigma");
    assert_eq!(csv.lines().count(), 4);
}
