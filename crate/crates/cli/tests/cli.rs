use std::path::Path;
use std::process::{Command, Output};

fn posetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posetrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = posetrack(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn topology_dump_has_header_and_33_rows() {
    let csv = ok(&["topology", "--dump"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 34);
    assert_eq!(lines[0], "index,name");
    assert_eq!(lines[1], "0,Nose");
    assert_eq!(lines[33], "32,Right foot index");
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(posetrack(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(posetrack(&["synth-gen"]).status.code(), Some(2));
    assert_eq!(posetrack(&["eval", "--data", "x"]).status.code(), Some(2));
    let out = posetrack(&["strip", "--checkpoint", "/nonexistent/model.pkt", "--out", "/tmp/x.pkt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"seed": 1, "trainer": {}}"#).unwrap();
    assert_eq!(posetrack(&["--config", s(&config), "topology"]).status.code(), Some(1));
}

#[test]
fn help_lists_every_subcommand_and_global_flag() {
    let help = ok(&["--help"]);
    for word in [
        "synth-gen",
        "train",
        "strip",
        "infer",
        "track",
        "eval",
        "agree",
        "grad-check",
        "topology",
        "align",
        "--config",
        "--seed",
        "--threads",
    ] {
        assert!(help.contains(word), "{word} missing from help");
    }
    let eval_help = ok(&["eval", "--help"]);
    for flag in [
        "--checkpoint",
        "--data",
        "--tolerance",
        "--subset",
        "--format",
        "--out",
        "--assert-min-pck",
    ] {
        assert!(eval_help.contains(flag), "{flag}");
    }
}

#[test]
fn synth_gen_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth-gen", "-n", "12", "--seed", "7", "--out", s(&a)]);
    ok(&["synth-gen", "-n", "12", "--seed", "7", "--out", s(&b)]);
    ok(&["synth-gen", "-n", "12", "--seed", "8", "--out", s(&c)]);
    let read = |d: &Path| std::fs::read(d.join("manifest.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(String::from_utf8(read(&a)).unwrap().lines().count(), 12);
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check", "--seeds", "2", "--entries", "3"]);
    assert!(out.contains("posenet"));
    assert!(out.contains("gradient-stop"));
    assert!(!out.contains("FAILED"));
}

#[test]
fn align_emits_transform_in_degrees() {
    let out = ok(&[
        "align",
        "--detection",
        "10,10,5,0",
        "--padding",
        "1",
        "--crop-size",
        "10",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["rotation"], 0.0);
    assert_eq!(v["scale"], 1.0);
    assert_eq!(v["tx"], 5.0);
    assert_eq!(v["ty"], 5.0);
    let out = ok(&[
        "align",
        "--detection",
        "0,0,5,90",
        "--padding",
        "1",
        "--crop-size",
        "10",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["rotation"].as_f64().unwrap() + 90.0).abs() < 1e-9);
}

#[test]
fn train_strip_infer_eval_track_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["synth-gen", "-n", "12", "--out", s(&p("data"))]);
    ok(&["synth-gen", "-n", "6", "--clip", "--seed", "3", "--out", s(&p("clip"))]);
    let config = p("run.json");
    std::fs::write(&config, r#"{"train": {"epochs": 1, "batch_size": 4}}"#).unwrap();
    ok(&[
        "--config",
        s(&config),
        "train",
        "--data",
        s(&p("data")),
        "--preset",
        "lite-toy",
        "--heldout",
        "2",
        "--out",
        s(&p("model.pkt")),
        "--curve",
        s(&p("curve.csv")),
    ]);
    let curve = std::fs::read_to_string(p("curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,loss,pck\n1,"));

    let strip = ok(&["strip", "--checkpoint", s(&p("model.pkt")), "--out", s(&p("lean.pkt"))]);
    assert!(strip.starts_with("parameters:"));

    let image = p("data").join("img_00000.ppm");
    let pose: serde_json::Value =
        serde_json::from_str(&ok(&["infer", "--checkpoint", s(&p("lean.pkt")), "--image", s(&image)])).unwrap();
    assert_eq!(pose["keypoints"].as_array().unwrap().len(), 33);
    assert_eq!(pose["visibility"].as_array().unwrap().len(), 33);

    let table = ok(&[
        "eval",
        "--checkpoint",
        s(&p("model.pkt")),
        s(&p("lean.pkt")),
        "--data",
        s(&p("data")),
        "--format",
        "csv",
    ]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], "Model,FPS,data PCK@0.2");
    // stripping must not change any prediction
    assert_eq!(rows[1].split(',').nth(2), rows[2].split(',').nth(2));
    let strict = posetrack(&[
        "eval",
        "--checkpoint",
        s(&p("model.pkt")),
        "--data",
        s(&p("data")),
        "--assert-min-pck",
        "101",
    ]);
    assert_eq!(strict.status.code(), Some(1));

    let jsonl = ok(&["track", "--checkpoint", s(&p("lean.pkt")), "--clip", s(&p("clip"))]);
    let lines: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0]["frame"], 1);
    assert_eq!(lines[0]["detector_ran"], true);
    let null = ok(&[
        "track",
        "--checkpoint",
        s(&p("lean.pkt")),
        "--clip",
        s(&p("clip")),
        "--detector",
        "null",
    ]);
    assert!(null.lines().all(|l| l.contains("\"pose\":null")));

    let agree = ok(&["agree", s(&p("data")), s(&p("data"))]);
    assert!(agree.contains("mean: 100.00"));
}
