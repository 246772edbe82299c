use std::path::Path;
use std::process::{Command, Output};

use icepilot::dataset::read_manifest;
use icepilot::report::read_report;
use icepilot::simulate::LogLine;

const SMALL: &str = r#"
[fan]
width = 32
height = 32

[model]
input_size = 32
stage_depths = [1, 1, 1, 1]
stage_dims = [4, 4, 6, 6]
stem_channels = [2, 4]
state_dim = 2

[train]
max_epochs = 1
batch_size = 16
"#;

fn icepilot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icepilot"))
        .current_dir(dir)
        .env_remove("ICEPILOT_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&icepilot(dir.path(), &[])), 2);
    assert_eq!(code(&icepilot(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&icepilot(dir.path(), &["gen-data"])), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[service]\nport = 0\n").unwrap();
    let o = icepilot(
        dir.path(),
        &["--config", bad.to_str().unwrap(), "gen-data", "--out", "d"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("port"));

    let o = icepilot(dir.path(), &["simulate", "--goals", "RV,XX"]);
    assert_eq!(code(&o), 2);
    let o = icepilot(
        dir.path(),
        &["eval", "--oracle", "--ckpt", "m.ckpt", "--out", "r.json"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config", &cfg, "train", "--data", "missing", "--out", "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 1);
    let o = icepilot(
        dir.path(),
        &["report", "--input", "nope.json", "--out", "r"],
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn stanza_names_seed_and_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "--seed",
            "9",
            "gen-data",
            "--out",
            "d",
            "--scenes",
            "1",
            "--renders",
            "2",
        ],
    );
    assert_eq!(code(&o), 0);
    let err = String::from_utf8_lossy(&o.stderr);
    let stanza = err.lines().next().unwrap();
    assert!(stanza.contains("seed=9"), "{stanza}");
    assert!(
        stanza.contains("config_hash=") && stanza.contains("git="),
        "{stanza}"
    );
}

#[test]
fn gen_data_writes_scenes_and_slices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "gen-data",
            "--out",
            "d",
            "--scenes",
            "3",
            "--renders",
            "10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&dir.path().join("d")).unwrap();
    let scenes = std::fs::read_dir(dir.path().join("d/scenes"))
        .unwrap()
        .count();
    let slices: usize = m
        .shards
        .iter()
        .map(|s| {
            std::fs::read_dir(dir.path().join("d").join(&s.shard_dir))
                .unwrap()
                .filter(|e| {
                    e.as_ref()
                        .unwrap()
                        .path()
                        .extension()
                        .is_some_and(|x| x == "slc")
                })
                .count()
        })
        .sum();
    assert_eq!((scenes, slices), (3, 30));
}

#[test]
fn gen_data_counts_and_small_dataset_underrun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "--seed",
            "3",
            "gen-data",
            "--out",
            "data",
            "--scenes",
            "2",
            "--renders",
            "5",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&dir.path().join("data")).unwrap();
    assert_eq!(m.shards.len(), 2);
    assert_eq!(m.record_count(), 10);
    let slices = std::fs::read_dir(dir.path().join("data").join(&m.shards[1].shard_dir))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "slc")
        .count();
    assert_eq!(slices, 5);

    // fewer than 100 records cannot train
    let o = icepilot(
        dir.path(),
        &[
            "--config", &cfg, "train", "--data", "data", "--out", "m.ckpt",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("100"));
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |args: &[&str]| {
        let mut full = vec!["--config", cfg.as_str()];
        full.extend_from_slice(args);
        let o = icepilot(dir.path(), &full);
        assert_eq!(
            code(&o),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        o
    };
    run(&[
        "gen-data",
        "--out",
        "data",
        "--scenes",
        "2",
        "--renders",
        "60",
    ]);
    run(&["train", "--data", "data", "--out", "m.ckpt"]);
    assert!(dir.path().join("m.ckpt").exists());
    run(&[
        "--seed",
        "77",
        "eval",
        "--ckpt",
        "m.ckpt",
        "--scene-count",
        "2",
        "--cases",
        "12",
        "--out",
        "eval/report.json",
    ]);
    let report = read_report(&dir.path().join("eval/report.json")).unwrap();
    assert_eq!(report.total, 12);
    assert!(dir.path().join("eval/report.histograms.csv").exists());
    run(&[
        "report",
        "--input",
        "eval/report.json",
        "--out",
        "again",
        "--plot",
    ]);
    assert_eq!(
        std::fs::read(dir.path().join("eval/report.cases.csv")).unwrap(),
        std::fs::read(dir.path().join("again/cases.csv")).unwrap()
    );
    assert!(dir.path().join("again/normalized.svg").exists());

    // the oracle on the dataset's own scenes hits every goal
    run(&[
        "eval",
        "--oracle",
        "--scenes",
        "data",
        "--cases",
        "12",
        "--out",
        "oracle.json",
    ]);
    let oracle = read_report(&dir.path().join("oracle.json")).unwrap();
    assert_eq!((oracle.total, oracle.correct), (12, 12));
}

#[test]
fn simulate_oracle_auto_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "simulate",
            "--estimator",
            "oracle",
            "--goal",
            "LAA",
            "--auto",
            "--log",
            "laa.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("laa.jsonl")).unwrap();
    let last: LogLine = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(serde_json::to_value(last.status).unwrap(), "Reached");

    // without --auto only the first advice is logged
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "simulate",
            "--estimator",
            "oracle",
            "--goal",
            "LAA",
            "--log",
            "advice.jsonl",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("advice.jsonl"))
            .unwrap()
            .lines()
            .count(),
        1
    );
}

#[test]
fn simulate_writes_a_step_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = icepilot(
        dir.path(),
        &[
            "--config",
            &cfg,
            "simulate",
            "--auto",
            "--goals",
            "LAA,HOME",
            "--start",
            "0.1,-0.1,0.2,55",
            "--log",
            "run.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let lines: Vec<LogLine> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().all(|l| l.goal_pose.is_some()));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("LAA: Reached") && err.contains("HOME: Reached"),
        "{err}"
    );
}
