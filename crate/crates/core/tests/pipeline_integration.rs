//! End-to-end pipeline runs over small synthetic corpora: gating, stage
//! caching, alignment, export, and determinism.

use std::fs;
use std::path::{Path, PathBuf};

use narr_core::config::RunConfig;
use narr_core::export::read_shards;
use narr_core::keyframe::Domain;
use narr_core::pipeline::{run_pipeline, Corpus, StageStatus, VideoJob};
use narr_core::synth::{generate_to_writer, SyntheticSpec, Waypoint};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

fn synth_video(path: &Path, duration: f64, seed: u64) {
    let spec = SyntheticSpec {
        width: 96,
        height: 96,
        fps_num: 5,
        fps_den: 1,
        duration,
        background_seed: seed,
        cursor_path: vec![
            Waypoint { t: 0.0, x: 10.0, y: 10.0 },
            Waypoint { t: duration, x: 85.0, y: 80.0 },
        ],
        motion_segments: vec![(20.0, 21.0), (22.0, 23.0), (24.0, 25.0)],
        motion_speed: 40.0,
        noise_sigma: 0.0,
        blob_delta: 60,
        blob_size: 5,
        distractors: vec![],
    };
    let mut file = std::io::BufWriter::new(fs::File::create(path).unwrap());
    generate_to_writer(&spec, seed, &mut file).unwrap();
}

fn transcript_jsonl() -> String {
    let segments = [
        (0.0, 9.0, "welcome to this ct teaching case"),
        (9.0, 15.0, "there is a large pleural effusion with a hemorage nearby"),
        (16.0, 22.0, "look here at the fracture line on this image"),
        (24.0, 40.0, "the chest scan shows the lung fields"),
        (40.0, 64.0, "this concludes the large pleural effusion discussion"),
    ];
    let mut out = String::new();
    for (start, end, text) in segments {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let dt = (end - start) / tokens.len() as f64;
        let words: Vec<serde_json::Value> = tokens
            .iter()
            .enumerate()
            .map(|(i, w)| {
                serde_json::json!({
                    "word": w,
                    "start": start + i as f64 * dt,
                    "end": start + (i + 1) as f64 * dt,
                })
            })
            .collect();
        out.push_str(
            &serde_json::json!({"start": start, "end": end, "text": text, "words": words})
                .to_string(),
        );
        out.push('\n');
    }
    out
}

fn build_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();

    synth_video(&root.join("vid0.nmv"), 65.0, 11);
    synth_video(&root.join("vid1.nmv"), 65.0, 12);
    synth_video(&root.join("vid2.nmv"), 30.0, 13); // fails duration_min

    write(&root.join("transcript.jsonl"), &transcript_jsonl());
    write(
        &root.join("lexicon.txt"),
        "hemorrhage 10\npleural effusion 5\nfracture\nlung\nchest\nscan\nshows\nlarge\n\
         teaching\ncase\nct\nimage\nfields\nline\nwelcome\nconcludes\ndiscussion\nnearby\n",
    );
    write(
        &root.join("lm.json"),
        &serde_json::json!({
            "correct": {
                "there is a large pleural effusion with a hemorage nearby":
                    "there is a large pleural effusion with a hemorrhage nearby"
            },
            "extract": {"*": "MEDICAL: large pleural effusion\nROI: fracture line"},
            "subdomain": {"*": "chest"},
            "crossdomain": {"*": "ct"}
        })
        .to_string(),
    );
    write(&root.join("embedding.json"), r#"{"default": [1.0, 0.0]}"#);

    let corpus = Corpus {
        videos: vec![
            VideoJob {
                id: "vid0".into(),
                frames: root.join("vid0.nmv"),
                transcript: Some(root.join("transcript.jsonl")),
                speech_intervals: None,
                masks: None,
                classifier_script: None,
                embedding_script: Some(root.join("embedding.json")),
                lm_script: Some(root.join("lm.json")),
                channel_subscribers: 1_000,
                domain: None,
            },
            VideoJob {
                id: "vid1".into(),
                frames: root.join("vid1.nmv"),
                transcript: Some(root.join("transcript.jsonl")),
                speech_intervals: None,
                masks: None,
                classifier_script: None,
                embedding_script: None,
                lm_script: Some(root.join("lm.json")),
                channel_subscribers: 1_000,
                domain: Some(Domain::Ultrasound),
            },
            VideoJob {
                id: "vid2".into(),
                frames: root.join("vid2.nmv"),
                transcript: Some(root.join("transcript.jsonl")),
                speech_intervals: None,
                masks: None,
                classifier_script: None,
                embedding_script: Some(root.join("embedding.json")),
                lm_script: Some(root.join("lm.json")),
                channel_subscribers: 1_000,
                domain: None,
            },
        ],
    };
    write(
        &root.join("corpus.json"),
        &serde_json::to_string_pretty(&corpus).unwrap(),
    );
    Fixture { _dir: dir, root }
}

fn config_for(fixture: &Fixture, out_name: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.domain = Domain::Ct;
    cfg.seed = 7;
    cfg.corpus = Some(fixture.root.join("corpus.json"));
    cfg.output_dir = fixture.root.join(out_name);
    cfg.transcript.lexicon = Some(fixture.root.join("lexicon.txt"));
    cfg.transcript.subdomain_vocabulary = vec!["chest".into(), "brain".into()];
    cfg
}

#[test]
fn full_corpus_run_exports_grounded_samples() {
    let fixture = build_fixture();
    let cfg = config_for(&fixture, "out");
    let summary = run_pipeline(&cfg).unwrap();

    assert_eq!(summary.videos.len(), 3);
    let vid0 = &summary.videos[0];
    assert!(vid0.gate.passed, "{:?}", vid0.gate);
    assert!(vid0.halted_after.is_none());
    assert!(vid0.sample_count > 0);
    assert!(vid0.trace_count > 0, "cursor traces expected");
    assert!(vid0.stages.iter().all(|s| s.status == StageStatus::Computed));

    let vid1 = &summary.videos[1];
    assert!(vid1.gate.passed, "non-static gate: {:?}", vid1.gate);
    assert_eq!(vid1.gate.narrative, Some(true));

    let vid2 = &summary.videos[2];
    assert!(!vid2.gate.passed);
    assert_eq!(vid2.halted_after.as_deref(), Some("gate"));
    assert_eq!(vid2.sample_count, 0);

    // exported shards hold decodable, fully attributed samples
    let (samples, warnings) = read_shards(&cfg.output_dir.join("shards")).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|s| !s.png.is_empty()));
    assert!(samples.iter().any(|s| s.record.video_id == "vid0"));
    assert!(samples.iter().any(|s| s.record.video_id == "vid1"));
    assert!(samples.iter().all(|s| s.record.video_id != "vid2"));
    let with_medical = samples
        .iter()
        .filter(|s| s.record.medical_texts.iter().any(|t| t == "large pleural effusion"))
        .count();
    assert!(with_medical > 0, "keyword-linked medical text expected");
    assert!(
        samples
            .iter()
            .any(|s| s.record.roi_texts.iter().any(|t| t == "fracture line")),
        "roi text expected on some sample"
    );
    for s in &samples {
        assert_eq!(s.record.subdomains, vec!["chest".to_string()]);
        assert_eq!(s.record.cross_domains.len(), 1);
        // traces respect the image bounds and pair with their bboxes
        assert_eq!(s.record.traces.len(), s.record.bboxes.len());
        for trace in &s.record.traces {
            for p in &trace.points {
                assert!(p.x >= 0.0 && p.x <= s.record.width as f64);
                assert!(p.y >= 0.0 && p.y <= s.record.height as f64);
            }
        }
    }
    let traced = samples.iter().filter(|s| !s.record.traces.is_empty()).count();
    assert!(traced > 0, "some samples must carry traces");

    // report artifacts exist and agree with an in-memory recount
    let report = summary.report.unwrap();
    assert_eq!(report.total.unique_images, samples.len());
    assert!(cfg.output_dir.join("report.json").exists());
    assert!(cfg.output_dir.join("report.txt").exists());
    assert!(cfg.output_dir.join("resolved_config.toml").exists());
    assert!(cfg.output_dir.join("videos/vid0/chunks.jsonl").exists());
    assert!(cfg.output_dir.join("videos/vid0/traces.jsonl").exists());
    assert!(cfg.output_dir.join("videos/vid0/metrics.json").exists());

    // the conditioned correction reached the corrected transcript
    let corrected = fs::read_to_string(cfg.output_dir.join("videos/vid0/corrected.jsonl")).unwrap();
    assert!(corrected.contains("hemorrhage"));
    assert!(!corrected.contains("hemorage"));
}

#[test]
fn rerun_hits_cache_and_reproduces_bytes() {
    let fixture = build_fixture();
    let cfg = config_for(&fixture, "out_a");
    let first = run_pipeline(&cfg).unwrap();
    assert!(!first.all_cached());

    let shard_bytes = |out: &Path| -> Vec<(String, Vec<u8>)> {
        let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(out.join("shards"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
    };
    let first_bytes = shard_bytes(&cfg.output_dir);

    let second = run_pipeline(&cfg).unwrap();
    assert!(second.all_cached(), "{:?}", second.videos[0].stages);
    assert_eq!(shard_bytes(&cfg.output_dir), first_bytes);

    // a fresh output directory reproduces the same shard and report bytes
    let cfg_b = config_for(&fixture, "out_b");
    run_pipeline(&cfg_b).unwrap();
    let report_a = fs::read(cfg.output_dir.join("report.json")).unwrap();
    let report_b = fs::read(cfg_b.output_dir.join("report.json")).unwrap();
    assert_eq!(report_a, report_b);
    let b_bytes = shard_bytes(&cfg_b.output_dir);
    assert_eq!(first_bytes, b_bytes);
}

#[test]
fn config_change_invalidates_dependent_stages() {
    let fixture = build_fixture();
    let cfg = config_for(&fixture, "out_c");
    run_pipeline(&cfg).unwrap();

    let mut changed = cfg.clone();
    changed.trace.noise_threshold = 30;
    let summary = run_pipeline(&changed).unwrap();
    let vid0 = &summary.videos[0];
    let status_of = |stage: &str| {
        vid0.stages
            .iter()
            .find(|s| s.stage == stage)
            .map(|s| s.status)
            .unwrap()
    };
    assert_eq!(status_of("keyframes"), StageStatus::Cached);
    assert_eq!(status_of("chunks"), StageStatus::Cached);
    assert_eq!(status_of("traces"), StageStatus::Computed);
}
