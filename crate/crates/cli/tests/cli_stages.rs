//! Drives the standalone subcommands through a full staged workflow:
//! synth -> keyframes -> chunks -> traces -> transcript -> align -> export
//! -> report, checking each stage's file interface.

use std::path::{Path, PathBuf};
use std::process::Command;

fn narr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_narr"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("spawn narr");
    assert!(
        output.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

struct Stage {
    root: PathBuf,
    _dir: tempfile::TempDir,
}

fn setup() -> Stage {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write(
        &root.join("spec.toml"),
        r#"
width = 96
height = 96
fps_num = 5
duration = 65.0
background_seed = 21
cursor_path = [[0.0, 12.0, 12.0], [65.0, 84.0, 80.0]]
motion_segments = [[20.0, 21.0], [22.0, 23.0]]
"#,
    );
    write(
        &root.join("transcript.jsonl"),
        &format!(
            "{}\n{}\n",
            serde_json::json!({
                "start": 0.0, "end": 30.0,
                "text": "the chest film shows a large pleural effusion",
                "words": [
                    {"word": "the", "start": 0.0, "end": 1.0},
                    {"word": "chest", "start": 1.0, "end": 2.0},
                    {"word": "film", "start": 2.0, "end": 3.0},
                    {"word": "shows", "start": 3.0, "end": 4.0},
                    {"word": "a", "start": 4.0, "end": 5.0},
                    {"word": "large", "start": 5.0, "end": 6.0},
                    {"word": "pleural", "start": 6.0, "end": 7.0},
                    {"word": "effusion", "start": 7.0, "end": 8.0}
                ]
            }),
            serde_json::json!({
                "start": 30.0, "end": 64.0,
                "text": "look here at the hemorage area",
                "words": [
                    {"word": "look", "start": 30.0, "end": 31.0},
                    {"word": "here", "start": 31.0, "end": 32.0},
                    {"word": "at", "start": 32.0, "end": 33.0},
                    {"word": "the", "start": 33.0, "end": 34.0},
                    {"word": "hemorage", "start": 34.0, "end": 35.0},
                    {"word": "area", "start": 35.0, "end": 36.0}
                ]
            })
        ),
    );
    write(
        &root.join("lexicon.txt"),
        "hemorrhage\npleural effusion 5\nchest\nfilm\nshows\nlarge\narea\nlook\n",
    );
    write(
        &root.join("lm.json"),
        &serde_json::json!({
            "correct": {"look here at the hemorage area": "look here at the hemorrhage area"},
            "extract": {"*": "MEDICAL: large pleural effusion\nROI: hemorrhage area"},
            "crossdomain": {"*": "xray"}
        })
        .to_string(),
    );
    Stage { root, _dir: dir }
}

#[test]
fn staged_subcommands_compose_into_shards() {
    let s = setup();
    let root = &s.root;
    let p = |name: &str| root.join(name).display().to_string();

    // synth
    run_ok(narr()
        .args(["synth", "--spec", &p("spec.toml"), "--seed", "3", "--out", &p("video.nmv")]));
    assert!(root.join("video.nmv").exists());
    assert!(root.join("video.truth.json").exists());
    let nmv = std::fs::read(root.join("video.nmv")).unwrap();
    assert_eq!(&nmv[..4], b"NMV1");
    let header_line_end = nmv.iter().position(|&b| b == b'\n').unwrap();
    assert_eq!(&nmv[4..header_line_end], b"96 96 5 1 1");

    // keyframes (xray is static: fixed profile threshold)
    let kf_out = run_ok(narr().args([
        "keyframes",
        "--frames",
        &p("video.nmv"),
        "--domain",
        "xray",
    ]));
    let kf: serde_json::Value = serde_json::from_str(&kf_out).unwrap();
    assert_eq!(kf["threshold"], 0.08);
    assert!(kf["keyframes"].as_array().unwrap().len() > 3);
    assert_eq!(kf["summary"]["medical_fraction"], 100.0);
    write(&root.join("keyframes.json"), &kf_out);

    // chunks
    let chunks_out = run_ok(narr().args([
        "chunks",
        "--frames",
        &p("video.nmv"),
        "--seed",
        "7",
        "--out",
        &p("chunks.jsonl"),
    ]));
    assert!(chunks_out.is_empty());
    let chunk_lines: Vec<serde_json::Value> = std::fs::read_to_string(root.join("chunks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(chunk_lines.len(), 2, "{chunk_lines:?}");
    for c in &chunk_lines {
        assert!(c["verified"].as_bool().unwrap());
        assert!(c["start_s"].as_f64().unwrap() < c["end_s"].as_f64().unwrap());
    }

    // traces
    run_ok(narr().args([
        "traces",
        "--frames",
        &p("video.nmv"),
        "--chunks",
        &p("chunks.jsonl"),
        "--traces-out",
        &p("traces.jsonl"),
        "--bboxes-out",
        &p("bboxes.jsonl"),
    ]));
    let trace_lines = std::fs::read_to_string(root.join("traces.jsonl")).unwrap();
    assert!(trace_lines.lines().count() > 100, "plenty of cursor points");
    let first: serde_json::Value = serde_json::from_str(trace_lines.lines().next().unwrap()).unwrap();
    for field in ["chunk_id", "t", "x", "y", "confidence"] {
        assert!(first.get(field).is_some(), "missing {field}");
    }
    let bbox_lines = std::fs::read_to_string(root.join("bboxes.jsonl")).unwrap();
    assert_eq!(bbox_lines.lines().count(), 2);

    // transcript
    run_ok(narr().args([
        "transcript",
        "--transcript",
        &p("transcript.jsonl"),
        "--lexicon",
        &p("lexicon.txt"),
        "--lm-script",
        &p("lm.json"),
        "--out",
        &p("corrected.jsonl"),
        "--metrics-out",
        &p("metrics.json"),
    ]));
    let corrected = std::fs::read_to_string(root.join("corrected.jsonl")).unwrap();
    assert!(corrected.contains("hemorrhage") && !corrected.contains("hemorage"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["precision_conditioned"], 1.0);

    // align
    run_ok(narr().args([
        "align",
        "--frames",
        &p("video.nmv"),
        "--keyframes",
        &p("keyframes.json"),
        "--chunks",
        &p("chunks.jsonl"),
        "--traces",
        &p("traces.jsonl"),
        "--transcript",
        &p("corrected.jsonl"),
        "--domain",
        "xray",
        "--video-id",
        "vidX",
        "--lm-script",
        &p("lm.json"),
        "--out-dir",
        &p("aligned"),
    ]));
    let aligned: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(root.join("aligned/aligned.json")).unwrap(),
    )
    .unwrap();
    assert!(!aligned.is_empty());
    assert!(aligned.iter().all(|s| s["video_id"] == "vidX"));
    assert!(aligned
        .iter()
        .any(|s| s["medical_texts"].as_array().unwrap().iter().any(|t| t == "large pleural effusion")));

    // export + report
    run_ok(narr().args([
        "export",
        "--aligned",
        &p("aligned/aligned.json"),
        "--images",
        &p("aligned/images"),
        "--out-dir",
        &p("shards"),
        "--shard-size",
        "4",
    ]));
    assert!(root.join("shards/manifest.json").exists());
    let table = run_ok(narr().args(["report", "--shards", &p("shards")]));
    assert!(table.contains("xray"), "{table}");
    assert!(table.contains("total"));
}

#[test]
fn gate_subcommand_reports_and_signals_failures() {
    let out = run_ok(narr().args([
        "gate",
        "--duration",
        "300",
        "--domain",
        "mri",
        "--medical-fraction",
        "6",
        "--subscribers",
        "100",
    ]));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["passed"], true);

    let output = narr()
        .args(["gate", "--duration", "30", "--domain", "mri"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&output.stdout)).unwrap();
    assert_eq!(report["failed_rules"][0], "duration_min");
}

#[test]
fn env_overrides_reach_the_run_config() {
    // NARR_ environment overrides are honored by subcommands that load a
    // config; verify via `chunks` with an impossible change fraction (no
    // pair can be stable), which must produce zero chunks
    let s = setup();
    let root = &s.root;
    let p = |name: &str| root.join(name).display().to_string();
    run_ok(narr().args(["synth", "--spec", &p("spec.toml"), "--seed", "3", "--out", &p("v.nmv")]));
    let out = run_ok(
        narr()
            .env("NARR_STABILITY_CHANGE_PIXEL_FRACTION", "-1.0")
            .args(["chunks", "--frames", &p("v.nmv")]),
    );
    assert!(out.trim().is_empty(), "no chunk can satisfy fraction < -1: {out}");
}
