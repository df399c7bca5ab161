//! `narr` — curation pipeline for localized narratives from screen-capture
//! pedagogical videos. Every stage is runnable standalone; `run` executes
//! the whole pipeline over a corpus from one config file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use narr_core::clients::{ConstClassifier, DomainClassifier, ScriptedClassifier, ScriptedLm};
use narr_core::config::RunConfig;
use narr_core::export;
use narr_core::gating::{gate_video, VideoMeta};
use narr_core::keyframe::{self, Domain, DomainProfile, KeyFrame};
use narr_core::pipeline::{
    self, align_video, bbox_records, chunks_from_file, trace_point_records, ChunkRecord,
    FrameFile, KeyframesPayload, StageStatus,
};
use narr_core::stability::{StabilityConfig, StableChunk};
use narr_core::synth;
use narr_core::trace::{MaskRegion, Trace};
use narr_core::transcript::{self, Lexicon};

#[derive(Parser)]
#[command(name = "narr", version, about = "Localized-narrative video curation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth video in the raw NMV1 format
    Synth(SynthArgs),
    /// Evaluate the video-level gate rules on supplied metadata
    Gate(GateArgs),
    /// Detect (and classify) key-frames in a frame stream
    Keyframes(KeyframesArgs),
    /// Detect stable chunks in a frame stream
    Chunks(ChunksArgs),
    /// Extract cursor traces and bounding boxes within stable chunks
    Traces(TracesArgs),
    /// Detect and correct transcript errors, report quality metrics
    Transcript(TranscriptArgs),
    /// Bind images, texts, and traces into aligned samples
    Align(AlignArgs),
    /// Pack aligned samples into tar shards with a checksum manifest
    Export(ExportArgs),
    /// Run the full pipeline over a corpus from a config file
    Run(RunArgs),
    /// Characterize exported shards
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Spec file (TOML)
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output frame stream (NMV1)
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar (JSON); defaults to `<out>.truth.json`
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct GateArgs {
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    has_speech: bool,
    #[arg(long, default_value_t = 0)]
    subscribers: u64,
    #[arg(long)]
    domain: Domain,
    /// Percentage of key-frames classified medical
    #[arg(long, default_value_t = 100.0)]
    medical_fraction: f64,
}

#[derive(Args)]
struct KeyframesArgs {
    /// Input frame stream (NMV1)
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    domain: Domain,
    /// Fixed scene threshold (overrides the profile / adaptive resolution)
    #[arg(long)]
    threshold: Option<f64>,
    /// Classifier mock script (JSON); defaults to an always-medical mock
    #[arg(long)]
    classifier_script: Option<PathBuf>,
    /// Output path (JSON); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChunksArgs {
    /// Input frame stream (NMV1)
    #[arg(long)]
    frames: PathBuf,
    /// Run config (TOML) supplying the stability section
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (JSONL of {start_s, end_s, verified}); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TracesArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Chunk list from the `chunks` subcommand (JSONL)
    #[arg(long)]
    chunks: PathBuf,
    /// Mask sidecar (JSON list of rectangles)
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace points out (JSONL); stdout when omitted
    #[arg(long)]
    traces_out: Option<PathBuf>,
    /// Bounding boxes out (JSONL); stdout when omitted
    #[arg(long)]
    bboxes_out: Option<PathBuf>,
}

#[derive(Args)]
struct TranscriptArgs {
    /// Transcript (JSONL of {start, end, text, words[]})
    #[arg(long)]
    transcript: PathBuf,
    /// Medical lexicon file
    #[arg(long)]
    lexicon: PathBuf,
    /// Language-model mock script (JSON); defaults to an echoing mock
    #[arg(long)]
    lm_script: Option<PathBuf>,
    /// Corrected transcript out (JSONL); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Correction records out (JSON)
    #[arg(long)]
    records_out: Option<PathBuf>,
    /// Quality metrics out (JSON)
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    ngram_cutoff: u64,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Keyframes payload from the `keyframes` subcommand (JSON)
    #[arg(long)]
    keyframes: PathBuf,
    /// Chunk list from the `chunks` subcommand (JSONL)
    #[arg(long)]
    chunks: PathBuf,
    /// Trace points from the `traces` subcommand (JSONL)
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Corrected transcript (JSONL)
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    domain: Domain,
    #[arg(long)]
    video_id: String,
    #[arg(long)]
    lm_script: Option<PathBuf>,
    #[arg(long)]
    classifier_script: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (aligned.json plus images/)
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Aligned samples (aligned.json from the `align` subcommand)
    #[arg(long)]
    aligned: PathBuf,
    /// Directory holding `<image_id>.png` files
    #[arg(long)]
    images: PathBuf,
    /// Shard output directory
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    shard_size: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML); NARR_* environment variables override its keys
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Shard directory (with manifest.json)
    #[arg(long)]
    shards: PathBuf,
    /// Also write the report as JSON here
    #[arg(long)]
    json_out: Option<PathBuf>,
}

fn out_or_stdout(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_jsonl<T: serde::Serialize>(sink: &mut dyn Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *sink, item)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

fn load_stability(config: &Option<PathBuf>, seed: Option<u64>) -> Result<StabilityConfig> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml("")?,
    };
    let mut stability = cfg.stability;
    stability.seed = seed.unwrap_or(cfg.seed);
    Ok(stability)
}

fn load_chunk_records(path: &PathBuf, fps: f64, frame_count: usize) -> Result<Vec<StableChunk>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut chunks = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: ChunkRecord = serde_json::from_str(line)?;
        let frame_start = (record.start_s * fps).round() as usize;
        let frame_end = ((record.end_s * fps).round() as usize).min(frame_count.saturating_sub(1));
        chunks.push(StableChunk {
            t_start: record.start_s,
            t_end: record.end_s,
            frame_start,
            frame_end,
            verified: record.verified,
        });
    }
    Ok(chunks)
}

fn load_masks(path: &Option<PathBuf>) -> Result<Vec<MaskRegion>> {
    Ok(match path {
        Some(p) => {
            narr_core::clients::ScriptedFaceDetector::from_path(p)
                .map_err(|e| anyhow::anyhow!("{e}"))?
                .masks
        }
        None => Vec::new(),
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Gate(args) => cmd_gate(args),
        Command::Keyframes(args) => cmd_keyframes(args),
        Command::Chunks(args) => cmd_chunks(args),
        Command::Traces(args) => cmd_traces(args),
        Command::Transcript(args) => cmd_transcript(args),
        Command::Align(args) => cmd_align(args),
        Command::Export(args) => cmd_export(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = synth::load_spec(&args.spec)?;
    let mut sink = BufWriter::new(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    let truth = synth::generate_to_writer(&spec, args.seed, &mut sink)?;
    sink.flush()?;
    let truth_path = args
        .ground_truth
        .unwrap_or_else(|| args.out.with_extension("truth.json"));
    std::fs::write(&truth_path, serde_json::to_string(&truth)?)?;
    eprintln!(
        "wrote {} ({} frames) and {}",
        args.out.display(),
        truth.cursor.len(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_gate(args: GateArgs) -> Result<()> {
    let meta = VideoMeta {
        duration: args.duration,
        has_speech: args.has_speech,
        channel_subscribers: args.subscribers,
        domain: args.domain,
    };
    let profile = DomainProfile::for_domain(args.domain);
    let report = gate_video(&meta, args.medical_fraction, &profile);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        std::process::exit(2);
    }
    Ok(())
}

fn cmd_keyframes(args: KeyframesArgs) -> Result<()> {
    let video = FrameFile::open(&args.frames)?;
    let profile = DomainProfile::for_domain(args.domain);
    let threshold = match args.threshold {
        Some(t) => t,
        None if profile.is_static => profile.scene_change_threshold,
        None => {
            let reader = video.reader()?;
            keyframe::adaptive_scene_threshold(reader.map(|f| f.expect("validated stream")))?
        }
    };
    let reader = video.reader()?;
    let mut detected = keyframe::detect_keyframes_with_threshold(
        reader.map(|f| f.expect("validated stream")),
        threshold,
    )?;
    let classifier: Box<dyn DomainClassifier> = match &args.classifier_script {
        Some(p) => Box::new(ScriptedClassifier::from_path(p).map_err(|e| anyhow::anyhow!("{e}"))?),
        None => Box::new(ConstClassifier::medical(1.0)),
    };
    let summary = keyframe::classify_keyframes(&mut detected, classifier.as_ref(), args.domain)?;
    let payload = serde_json::json!({
        "threshold": threshold,
        "keyframes": detected.keyframes,
        "summary": summary,
    });
    let mut sink = out_or_stdout(&args.out)?;
    writeln!(sink, "{}", serde_json::to_string_pretty(&payload)?)?;
    Ok(())
}

fn cmd_chunks(args: ChunksArgs) -> Result<()> {
    let stability = load_stability(&args.config, args.seed)?;
    let mut video = FrameFile::open(&args.frames)?;
    let chunks = chunks_from_file(&mut video, &stability).map_err(|e| anyhow::anyhow!(e))?;
    let records: Vec<ChunkRecord> = chunks.iter().map(ChunkRecord::from).collect();
    let mut sink = out_or_stdout(&args.out)?;
    write_jsonl(sink.as_mut(), &records)?;
    Ok(())
}

fn cmd_traces(args: TracesArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml("")?,
    };
    let mut video = FrameFile::open(&args.frames)?;
    let fps = video.header().fps();
    let chunks = load_chunk_records(&args.chunks, fps, video.frame_count())?;
    let masks = load_masks(&args.masks)?;
    let (traces, bboxes) = pipeline::traces_from_file(&mut video, &chunks, &masks, &cfg.trace)
        .map_err(|e| anyhow::anyhow!(e))?;
    let mut tsink = out_or_stdout(&args.traces_out)?;
    write_jsonl(tsink.as_mut(), &trace_point_records(&traces))?;
    drop(tsink);
    let mut bsink = out_or_stdout(&args.bboxes_out)?;
    write_jsonl(bsink.as_mut(), &bbox_records(&traces, &bboxes))?;
    Ok(())
}

fn cmd_transcript(args: TranscriptArgs) -> Result<()> {
    let segments = transcript::read_transcript(BufReader::new(
        File::open(&args.transcript)
            .with_context(|| format!("opening {}", args.transcript.display()))?,
    ))?;
    let lexicon = Lexicon::from_path(&args.lexicon)?;
    let lm: Box<dyn narr_core::clients::LmClient> = match &args.lm_script {
        Some(p) => Box::new(ScriptedLm::from_path(p).map_err(|e| anyhow::anyhow!("{e}"))?),
        None => Box::new(ScriptedLm::echo()),
    };
    let candidates = transcript::detect_errors(&segments, &lexicon, args.ngram_cutoff);
    let (corrected, records) = transcript::correct(&segments, &candidates, lm.as_ref(), &lexicon);
    let metrics =
        transcript::quality_metrics(&records, transcript::count_words(&segments));
    let mut sink = out_or_stdout(&args.out)?;
    let mut buf = Vec::new();
    transcript::write_transcript(&mut buf, &corrected)?;
    sink.write_all(&buf)?;
    drop(sink);
    if let Some(p) = &args.records_out {
        std::fs::write(p, serde_json::to_string_pretty(&records)?)?;
    }
    if let Some(p) = &args.metrics_out {
        std::fs::write(p, serde_json::to_string_pretty(&metrics)?)?;
    }
    eprintln!(
        "candidates: {}, applied: {}, metrics: {}",
        candidates.len(),
        records.iter().filter(|r| r.applied).count(),
        serde_json::to_string(&metrics)?
    );
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml("")?,
    };
    let mut video = FrameFile::open(&args.frames)?;
    let fps = video.header().fps();

    let kf_text = std::fs::read_to_string(&args.keyframes)?;
    let kf_payload: KeyframesPayload = serde_json::from_str(&kf_text)
        .with_context(|| format!("parsing {}", args.keyframes.display()))?;
    let keyframes: Vec<KeyFrame> = kf_payload.keyframes;

    let chunks = load_chunk_records(&args.chunks, fps, video.frame_count())?;

    let mut traces: Vec<Trace> = Vec::new();
    if let Some(path) = &args.traces {
        let text = std::fs::read_to_string(path)?;
        let mut by_chunk: std::collections::BTreeMap<usize, Trace> = Default::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: pipeline::TracePointRecord = serde_json::from_str(line)?;
            by_chunk
                .entry(record.chunk_id)
                .or_insert_with(|| Trace {
                    chunk_id: record.chunk_id,
                    points: Vec::new(),
                    image_ref: None,
                })
                .points
                .push(narr_core::trace::TracePoint {
                    t: record.t,
                    x: record.x,
                    y: record.y,
                    confidence: record.confidence,
                });
        }
        traces = by_chunk.into_values().collect();
    }
    let bboxes: Vec<narr_core::trace::BBox> = traces
        .iter()
        .map(|t| narr_core::trace::trace_to_bbox(t))
        .collect::<Result<_, _>>()?;

    let corrected = match &args.transcript {
        Some(p) => transcript::read_transcript(BufReader::new(File::open(p)?))?,
        None => Vec::new(),
    };

    let lm: Box<dyn narr_core::clients::LmClient> = match &args.lm_script {
        Some(p) => Box::new(ScriptedLm::from_path(p).map_err(|e| anyhow::anyhow!("{e}"))?),
        None => Box::new(ScriptedLm::echo()),
    };
    let classifier: Box<dyn DomainClassifier> = match &args.classifier_script {
        Some(p) => Box::new(ScriptedClassifier::from_path(p).map_err(|e| anyhow::anyhow!("{e}"))?),
        None => Box::new(ConstClassifier::medical(1.0)),
    };

    let output = align_video(
        &cfg,
        &args.video_id,
        args.domain,
        &mut video,
        &keyframes,
        &chunks,
        &traces,
        &bboxes,
        &corrected,
        lm.as_ref(),
        classifier.as_ref(),
    )
    .map_err(|e| anyhow::anyhow!(e))?;

    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(
        args.out_dir.join("aligned.json"),
        serde_json::to_string_pretty(&output.samples)?,
    )?;
    let images_dir = args.out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    for image in &output.images {
        std::fs::write(images_dir.join(format!("{}.png", image.id)), &image.png)?;
    }
    eprintln!(
        "aligned {} samples ({} images) into {}",
        output.samples.len(),
        output.images.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.aligned)
        .with_context(|| format!("reading {}", args.aligned.display()))?;
    let samples: Vec<narr_core::align::AlignedSample> = serde_json::from_str(&text)?;
    let mut narrative = Vec::with_capacity(samples.len());
    for s in &samples {
        let png_path = args.images.join(format!("{}.png", s.image_id));
        let png = std::fs::read(&png_path)
            .with_context(|| format!("reading {}", png_path.display()))?;
        narrative.push(export::NarrativeSample {
            key: s.image_id.clone(),
            png,
            record: pipeline::sample_record(s),
        });
    }
    let manifest = export::write_shards(&narrative, args.shard_size, &args.out_dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let summary = pipeline::run_pipeline(&cfg)?;
    for video in &summary.videos {
        let status = match (&video.halted_after, video.gate.passed) {
            (Some(stage), _) => format!("halted at {stage}"),
            (None, true) => format!(
                "ok ({} samples, {} traces)",
                video.sample_count, video.trace_count
            ),
            (None, false) => "rejected".to_string(),
        };
        println!("video {:<16} {status}", video.id);
        for stage in &video.stages {
            let what = match stage.status {
                StageStatus::Computed => "computed",
                StageStatus::Cached => "cached",
            };
            println!("  stage {:<12} {what} (key {})", stage.stage, stage.key);
        }
    }
    if let Some(manifest) = &summary.manifest {
        let total: usize = manifest.shards.iter().map(|s| s.count).sum();
        println!(
            "exported {total} samples into {} shards under {}",
            manifest.shards.len(),
            cfg.output_dir.join("shards").display()
        );
    }
    if let Some(report) = &summary.report {
        print!("{}", export::render_table(report));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let (samples, warnings) = export::read_shards(&args.shards)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    if samples.is_empty() {
        bail!("no samples in {}", args.shards.display());
    }
    let report = export::characterize(&samples);
    if let Some(p) = &args.json_out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    print!("{}", export::render_table(&report));
    Ok(())
}

