//! Runs the `cogrelay` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cogrelay(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogrelay"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("COGRELAY_WORKERS")
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 8] = ["--values", "0.2,0.4", "--trials", "3", "--frames", "5", "--seed", "17"];

#[test]
fn test_identical_runs_write_identical_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = cogrelay(&[&SMALL[..], &["--workers", "1", "--trace"]].concat(), a.path());
    let two = cogrelay(&[&SMALL[..], &["--workers", "3", "--trace"]].concat(), b.path());
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    assert!(two.status.success(), "{}", String::from_utf8_lossy(&two.stderr));
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"manifest.json".to_string()));
    assert!(names.contains(&"trace.csv".to_string()));
    for name in &names {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let summary = |o: &Output| String::from_utf8_lossy(&o.stdout).lines().filter(|l| !l.starts_with("wrote")).collect::<Vec<_>>().join("\n");
    assert_eq!(summary(&one), summary(&two));
}

#[test]
fn test_manifest_records_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = cogrelay(&[&SMALL[..], &["--systems", "proposed,naive"]].concat(), dir.path());
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 17);
    assert_eq!(manifest["trials"], 3);
    assert_eq!(manifest["systems"], serde_json::json!(["proposed", "naive"]));
    assert_eq!(manifest["config"]["frames_per_trial"], 5);
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn test_seed_changes_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cogrelay(&SMALL, a.path());
    let mut other = SMALL;
    other[7] = "18";
    cogrelay(&other, b.path());
    assert_ne!(fs::read(a.path().join("runs.csv")).unwrap(), fs::read(b.path().join("runs.csv")).unwrap());
}

#[test]
fn test_config_file_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    fs::write(&cfg, "num_subchannels = 2\nframes_per_trial = 4\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cogrelay(
        &["--config", cfg.to_str().unwrap(), "--values", "0.3", "--trials", "2", "--systems", "proposed"],
        &out_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"num_subchannels\": 2"));
}

#[test]
fn test_bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 5] = [
        (&["--values", ""], "value"),
        (&["--systems", "ssa"], "not implemented"),
        (&["--param", "bandwidth"], "bandwidth"),
        (&["--trials", "0"], "trial"),
        (&["--values", "0.2,abc"], "abc"),
    ];
    for (args, needle) in cases {
        let out = cogrelay(args, &dir.path().join("never"));
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
        assert!(err.contains(needle), "{args:?}: {err}");
    }
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = cogrelay(&["--config", cfg.to_str().unwrap()], &dir.path().join("never"));
    assert!(!out.status.success());
    assert!(!dir.path().join("never").exists());
}
