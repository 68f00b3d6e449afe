use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const ALOD: &str = env!("CARGO_BIN_EXE_alod");

fn alod(args: &[&str]) -> Output {
    Command::new(ALOD)
        .args(args)
        .env_remove("ALOD_DATA_ROOT")
        .output()
        .expect("spawn alod")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dump(args: &[&str]) -> Value {
    let mut all = vec!["run", "--dump-config"];
    all.extend_from_slice(args);
    let o = alod(&all);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

/// A small dataset shared by the tests that run experiments.
fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("alod-cli-test-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let o = alod(&[
            "generate",
            "--out",
            dir.to_str().unwrap(),
            "--train",
            "80",
            "--val",
            "0",
            "--test",
            "20",
            "--seed",
            "5",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
}

#[test]
fn help_and_usage_errors() {
    let o = alod(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["generate", "stats", "run", "evaluate", "protocol-check"] {
        assert!(stdout(&o).contains(sub), "help lacks {sub}");
    }
    assert_eq!(alod(&[]).status.code(), Some(2));
    assert_eq!(alod(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(alod(&["run", "--strategies", "coin_flip"]).status.code(), Some(2));
}

#[test]
fn missing_manifest_is_a_config_error() {
    let o = alod(&["run"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: al.manifest"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let o = alod(&["run", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[config]"));
}

#[test]
fn documented_defaults() {
    let d = dump(&[]);
    let c = &d["config"];
    let al = &c["al"];
    assert_eq!(al["initial_labeled"], 100);
    assert_eq!(al["steps"], 8);
    assert_eq!(al["eval_score_threshold"], 0.05);
    assert_eq!(al["seeds"], serde_json::json!([0, 1, 2, 3]));
    assert_eq!(
        al["strategies"],
        serde_json::json!(["random", "entropy", "prob_margin", "mc_dropout", "mutual_information"])
    );
    assert_eq!(al["jobs"], 1);
    assert_eq!(al["record_wall_clock"], true);
    assert_eq!(al["backend"]["command"], "builtin:sim");
    assert_eq!(al["query"]["query_size"], 100);
    assert_eq!(al["query"]["dropout_samples"], 10);
    assert_eq!(al["query"]["aggregation"], "sum");
    assert_eq!(al["query"]["class_weighting"], true);
    assert_eq!(al["postproc"]["score_threshold"], 0.5);
    assert_eq!(al["postproc"]["iou_threshold"], 0.5);
    assert_eq!(al["postproc"]["class_aware"], false);
    let sim = &c["sim"];
    assert_eq!(sim["tau"], 100.0);
    assert_eq!(sim["miss_floor"], 0.0);
    assert_eq!(sim["sigma_loc"], 0.15);
    assert_eq!(sim["concentration"], 15.0);
    assert_eq!(sim["fp_rate"], 1.0);
    assert_eq!(sim["dropout_jitter"], 0.2);
    let synth = &c["synth"];
    assert_eq!(synth["instance_rate"], 3.0);
    assert_eq!(synth["image_width"], 300);
    assert_eq!(synth["image_height"], 300);
    assert_eq!(c["output_root"], "runs");
    assert_eq!(d["fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn precedence_file_set_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[al.query]\nquery_size = 30\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let q = |d: &Value| d["config"]["al"]["query"]["query_size"].clone();
    assert_eq!(q(&dump(&["--config", cfg])), 30);
    assert_eq!(q(&dump(&["--config", cfg, "--set", "al.query.query_size=40"])), 40);
    assert_eq!(q(&dump(&["--config", cfg, "--set", "al.query.query_size=40", "--query-size", "50"])), 50);
    assert_eq!(q(&dump(&["--query-size", "50"])), 50);

    fs::write(dir.path().join("bad.toml"), "[al]\nstepz = 3\n").unwrap();
    let o = alod(&["run", "--config", dir.path().join("bad.toml").to_str().unwrap(), "--dump-config"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[config]"));
}

#[test]
fn run_writes_resolved_config_that_round_trips() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let manifest = data.join("manifest.json");
    let a = out.path().join("a");
    let o = alod(&[
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--initial-labeled",
        "10",
        "--query-size",
        "10",
        "--steps",
        "2",
        "--strategies",
        "random,entropy",
        "--seeds",
        "0,1",
        "--no-wall-clock",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);
    let resolved = a.join("config.resolved.json");
    let stored: Value = serde_json::from_str(&fs::read_to_string(&resolved).unwrap()).unwrap();

    let again = dump(&["--config", resolved.to_str().unwrap()]);
    assert_eq!(again["fingerprint"], stored["fingerprint"]);

    // Rerunning from the resolved file elsewhere reproduces the runlogs.
    let b = out.path().join("b");
    let o = alod(&["run", "--config", resolved.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for s in ["random", "entropy"] {
        for seed in [0, 1] {
            let rel = format!("{s}/seed_{seed}/runlog.json");
            assert_eq!(fs::read(a.join(&rel)).unwrap(), fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
    let log: Value = serde_json::from_str(&fs::read_to_string(a.join("random/seed_0/runlog.json")).unwrap()).unwrap();
    assert_eq!(log["fingerprint"], stored["fingerprint"]);
    assert_eq!(log["steps"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(a.join("random/seed_0/runlog.csv")).unwrap();
    assert!(csv.starts_with("step,images_labeled,instances_labeled,map50,seconds\n"), "{csv}");

    let rep = out.path().join("report");
    let o = alod(&["evaluate", "--runs", a.to_str().unwrap(), "--out", rep.to_str().unwrap(), "--svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(rep.join("tables.md").is_file());
    assert!(rep.join("curves/entropy_images.csv").is_file());
}

#[test]
fn data_root_env_supplies_the_manifest() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(ALOD)
        .args(["run", "--out", out.path().to_str().unwrap()])
        .args(["--initial-labeled", "10", "--query-size", "10", "--steps", "1"])
        .args(["--strategies", "random", "--seeds", "3"])
        .env("ALOD_DATA_ROOT", data)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.path().join("random/seed_3/runlog.json").is_file());
}

#[test]
fn backend_failures_are_reported_by_category() {
    let data = dataset();
    let out = tempfile::tempdir().unwrap();
    let base = [
        "run",
        "--manifest",
        &data.join("manifest.json").display().to_string(),
        "--out",
        &out.path().display().to_string(),
        "--initial-labeled",
        "10",
        "--query-size",
        "10",
        "--steps",
        "1",
        "--strategies",
        "random",
        "--seeds",
        "0",
    ]
    .map(String::from);
    let mut args: Vec<&str> = base.iter().map(String::as_str).collect();
    args.extend(["--backend", "/nonexistent/backend"]);
    let o = alod(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[backend]"), "{}", stderr(&o));

    let o = alod(&["protocol-check", "--backend", "false"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL query_with_samples"));
    assert!(stderr(&o).starts_with("error[protocol]"), "{}", stderr(&o));
}

#[test]
fn stats_and_empty_evaluate() {
    let data = dataset();
    let o = alod(&["stats", "--manifest", data.join("manifest.json").to_str().unwrap(), "--split", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[2], "80");

    let empty = tempfile::tempdir().unwrap();
    let o = alod(&["evaluate", "--runs", empty.path().to_str().unwrap(), "--out", empty.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[eval]"), "{}", stderr(&o));
}
