use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dseval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dseval"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toy_eval_solves_every_task_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = dseval(&[
            "eval",
            "--manifest",
            "configs/eval-toy.toml",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let report = json(&a.join("report.json"));
    assert_eq!(report["models"][0]["analysis"]["correct"], 3);
    assert_eq!(report["failures"], Value::Array(vec![]));
    for f in [
        "report.json",
        "report.txt",
        "outcomes.jsonl",
        "manifest.toml",
        "run.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let traj = std::fs::read_to_string(a.join("trajectories/toy-solver/top-region.jsonl")).unwrap();
    assert!(traj.contains("south"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dseval(&[
        "eval",
        "--suite",
        "suites/does-not-exist",
        "--models",
        "toy-solver",
        "--model-registry",
        "configs/models.toml",
        "--max-turns",
        "5",
        "--backend",
        "fake",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[E-SUITE]"), "{}", stderr(&o));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dseval(&[
        "eval",
        "--manifest",
        "configs/eval-toy.toml",
        "--models",
        "nobody",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[E-MODEL]"), "{}", stderr(&o));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = dseval(&[
        "eval",
        "--manifest",
        "configs/eval-toy.toml",
        "--dry-run",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("3 episodes"), "{text}");
    assert!(!out.join("report.json").exists());
}

#[test]
fn validate_accepts_the_toy_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dseval(&[
        "validate",
        "--suite",
        "suites/toy",
        "--strict",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 flagged"));
}

#[test]
fn curate_reports_the_rule_that_fired() {
    let tmp = tempfile::tempdir().unwrap();
    let records = tmp.path().join("records.toml");
    std::fs::write(
        &records,
        r#"schema = "dseval.competition/v1"

[[competition]]
slug = "playground-series-s4e1"
close_date = "2024-02-01"
accepts_submissions = true
submission_format = "csv"
data_size_bytes = 20000000
valid_ml_challenge = true
leaderboard_present = true
description_complete = true

[[competition]]
slug = "satellite-mosaics"
close_date = "2022-06-01"
accepts_submissions = true
submission_format = "csv"
data_size_bytes = 40000000000
valid_ml_challenge = true
leaderboard_present = true
description_complete = true
"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = dseval(&[
        "curate",
        "--records",
        records.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let funnel = json(&out.join("funnel.json"));
    let size = funnel["rules"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["rule"] == "SizeLimit")
        .unwrap();
    assert_eq!(size["fired"], 1);
    assert_eq!(
        funnel["passed"],
        serde_json::json!(["playground-series-s4e1"])
    );
    assert_eq!(
        funnel["split"]["easy"],
        serde_json::json!(["playground-series-s4e1"])
    );
}

fn judge_registry(dir: &Path, correct: &[usize]) -> PathBuf {
    let answers = [
        ("total-units", "18"),
        ("top-region", "south"),
        ("mean-price", "5.2"),
    ];
    let mut registry = String::from("schema = \"dseval.models/v1\"\n");
    for j in 0..5 {
        let by_key: serde_json::Map<String, Value> = answers
            .iter()
            .map(|(task, gold)| {
                let a = if correct.contains(&j) {
                    *gold
                } else {
                    "no idea"
                };
                (
                    task.to_string(),
                    serde_json::json!([format!("<answer>{a}</answer>")]),
                )
            })
            .collect();
        std::fs::write(
            dir.join(format!("j{j}.json")),
            serde_json::json!({ "by_key": by_key }).to_string(),
        )
        .unwrap();
        registry.push_str(&format!(
            "\n[[model]]\nmodel_id = \"judge-{j}\"\nbackend = \"scripted\"\nendpoint = \"j{j}.json\"\n"
        ));
    }
    let path = dir.join("judges.toml");
    std::fs::write(&path, registry).unwrap();
    path
}

fn shortcut(correct: &[usize]) -> Value {
    let tmp = tempfile::tempdir().unwrap();
    let registry = judge_registry(tmp.path(), correct);
    let out = tmp.path().join("out");
    let o = dseval(&[
        "shortcut",
        "--suite",
        "suites/toy",
        "--models",
        "judge-0,judge-1,judge-2,judge-3,judge-4",
        "--model-registry",
        registry.to_str().unwrap(),
        "--profile",
        "configs/profiles",
        "--max-turns",
        "3",
        "--backend",
        "fake",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    json(&out.join("shortcut.json"))
}

#[test]
fn shortcut_flags_tasks_a_majority_answers_blind() {
    let flagged = shortcut(&[0, 1, 2, 3, 4]);
    assert_eq!(flagged["k"], 3);
    assert_eq!(flagged["shortcut_solvable"].as_array().unwrap().len(), 3);
    let kept = shortcut(&[1, 3]);
    assert_eq!(kept["shortcut_solvable"], serde_json::json!([]));
    assert_eq!(kept["retained"].as_array().unwrap().len(), 3);
}

#[test]
fn synth_exports_accepted_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("synth");
    let o = dseval(&[
        "synth",
        "--manifest",
        "configs/eval-toy.toml",
        "--config",
        "configs/synth-toy.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&out.join("synth_report.json"));
    assert_eq!(report["accepted"], 3);
    assert_eq!(report["trajectories_judged"], 6);
    let sft = std::fs::read_to_string(out.join("sft.jsonl")).unwrap();
    let lines: Vec<Value> = sft
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["schema"] == "dseval.sft/v1"));
}
