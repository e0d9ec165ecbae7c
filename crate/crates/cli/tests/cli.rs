use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: &[&str] = &[
    "--num_clusters",
    "2",
    "--pretrain_iters",
    "2",
    "--max_iters",
    "2",
    "--target_update_interval",
    "1",
    "--batch_size",
    "4",
    "--kmeans_restarts",
    "2",
];

fn dscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dscan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = dscan(args);
    assert!(
        out.status.success(),
        "dscan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Six one-second toy clips with features under `dir/run`.
fn toy_features(dir: &Path) {
    let data = dir.join("data");
    ok(&[
        "toy",
        "--out",
        s(&data),
        "--classes",
        "2",
        "--clips_per_class",
        "3",
        "--duration_secs",
        "1",
    ]);
    let manifest = data.join("manifest.csv");
    let v = ok(&[
        "extract",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.join("run")),
    ]);
    assert_eq!(v["records"], 6);
    assert_eq!(v["failed"], 0);
}

fn train(dir: &Path, out: &str) -> Value {
    let mut args = vec!["train", "--features"];
    let features = dir.join("run/features.dstf");
    let out = dir.join(out);
    args.push(s(&features));
    args.extend(["--out", s(&out)]);
    args.extend(FAST);
    ok(&args)
}

#[test]
fn full_workflow_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_features(dir);
    let v = train(dir, "a");
    assert_eq!(v["clips"], 6);
    for f in [
        "assignments.csv",
        "history.jsonl",
        "model.dsckpt",
        "embeddings.dstf",
        "run_config.txt",
    ] {
        assert!(dir.join("a").join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.join("a/assignments.csv")).unwrap();
    let mut ids: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 6);
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 6);
    let history = std::fs::read_to_string(dir.join("a/history.jsonl")).unwrap();
    let joint = v["joint_iters"].as_u64().unwrap() as usize;
    assert!((1..=2).contains(&joint));
    assert_eq!(history.lines().count(), 2 + joint);
    let rec: Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    assert!(rec["L_J"].as_f64().unwrap().is_finite());

    let manifest = dir.join("data/manifest.csv");
    let out = dir.join("a");
    let v = ok(&["evaluate", "--manifest", s(&manifest), "--out", s(&out)]);
    let nmi = v["nmi"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&nmi));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(report["contingency_table"]["counts"].is_array());

    ok(&["project", "--out", s(&out)]);
    let proj = std::fs::read_to_string(out.join("projection.csv")).unwrap();
    assert_eq!(proj.lines().next(), Some("clip_id,x,y,cluster"));
    assert_eq!(proj.lines().count(), 7);

    let v = ok(&["analyze", "--out", s(&out)]);
    let p = v["total_params"].as_u64().unwrap();
    assert!((50_000..=95_000).contains(&p));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_features(dir);
    train(dir, "a");
    train(dir, "b");
    for f in [
        "assignments.csv",
        "model.dsckpt",
        "embeddings.dstf",
        "history.jsonl",
    ] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn sweep_writes_one_row_per_beta() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_features(dir);
    let manifest = dir.join("data/manifest.csv");
    let features = dir.join("run/features.dstf");
    let out = dir.join("sweep");
    let mut args = vec![
        "sweep-beta",
        "--manifest",
        s(&manifest),
        "--features",
        s(&features),
        "--out",
        s(&out),
        "--beta_grid",
        "0,0.5",
    ];
    args.extend(FAST);
    let v = ok(&args);
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert_eq!(v["runs"][0]["joint_iters"], 0);
    let csv = std::fs::read_to_string(out.join("sweep_beta.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,nmi,ca");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("0.5,"));
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "num_clusters = 4\n").unwrap();
    let out = tmp.path().join("o");
    let a = ok(&["analyze", "--config", s(&cfg), "--out", s(&out)]);
    let b = ok(&[
        "analyze",
        "--config",
        s(&cfg),
        "--num-clusters",
        "5",
        "--out",
        s(&out),
    ]);
    // the clustering layer holds K x 10 parameters
    assert_eq!(
        b["total_params"].as_u64().unwrap() - a["total_params"].as_u64().unwrap(),
        10
    );
}

#[test]
fn failures_are_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let e = error_of(&dscan(&[
        "extract",
        "--manifest",
        s(&missing),
        "--out",
        s(tmp.path()),
    ]));
    assert_eq!(e["error"]["kind"], "io");
    assert!(e["error"]["message"].as_str().unwrap().contains("nope.csv"));

    let out = dscan(&["train", "--beta=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "config");

    let out = dscan(&["extract"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");

    let out = dscan(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");
}

#[test]
fn extraction_skips_unreadable_clips() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "toy",
        "--out",
        s(&data),
        "--classes",
        "1",
        "--clips_per_class",
        "3",
        "--duration_secs",
        "1",
    ]);
    std::fs::remove_file(data.join("wav/toy_c0_001.wav")).unwrap();
    let out = tmp.path().join("run");
    let v = ok(&[
        "extract",
        "--manifest",
        s(&data.join("manifest.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(v["records"], 2);
    assert_eq!(v["failed"], 1);
    let errors: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("extract_errors.json")).unwrap())
            .unwrap();
    assert_eq!(errors[0]["clip_id"], "toy_c0_001");
}
