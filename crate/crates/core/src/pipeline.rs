//! Per-video pipeline orchestration with content-addressed stage caching,
//! plus corpus-level execution over a bounded worker pool.
//!
//! Stage order per video is strict: gate (metadata rules) -> keyframes ->
//! gate (fraction + narrative) -> chunks -> traces -> transcript -> align;
//! exporting shards and the characterization report happens once per corpus
//! after every video completes. Each cached stage is keyed on its version,
//! the relevant config subset, and the content hashes of its inputs, so a
//! re-run with unchanged inputs reports every stage as cached. With fixed
//! config and seeds the shard bytes and reports are identical across runs.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{
    self, AlignWindow, AlignedSample, KeywordSet, RepMethod, RepresentativeImage,
};
use crate::clients::{
    ConstClassifier, DomainClassifier, EmbeddingClient, FaceDetector, LmClient,
    LumaDownsampleEmbedding, ScriptedClassifier, ScriptedEmbedding, ScriptedFaceDetector,
    ScriptedLm, ScriptedSpeech, SpeechSegmenter,
};
use crate::config::RunConfig;
use crate::export::{self, DatasetReport, Manifest, NarrativeSample, SampleRecord};
use crate::frame::{FormatError, Frame, StreamHeader};
use crate::gating::{self, GateReport, VideoMeta};
use crate::keyframe::{
    self, ClassifySummary, DetectedKeyframes, Domain, DomainProfile, KeyFrame,
};
use crate::stability::{self, DiffDecision, StabilityConfig, StableChunk};
use crate::trace::{self, MaskRegion, Trace, BBox};
use crate::transcript::{self, Lexicon, QualityMetrics, TranscriptSegment};

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed for video {video} (input key {key}): {message}")]
    Stage {
        stage: &'static str,
        video: String,
        key: String,
        message: String,
    },
    #[error("export failed: {0}")]
    Export(#[from] export::ExportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One video's inputs: the raw frame stream plus optional sidecars for the
/// transcript and the client mocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoJob {
    pub id: String,
    pub frames: PathBuf,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Speech-segmenter mock sidecar: `[[start, end], ...]`.
    #[serde(default)]
    pub speech_intervals: Option<PathBuf>,
    /// Face-detector mock sidecar: `[{x, y, width, height}, ...]`.
    #[serde(default)]
    pub masks: Option<PathBuf>,
    #[serde(default)]
    pub classifier_script: Option<PathBuf>,
    #[serde(default)]
    pub embedding_script: Option<PathBuf>,
    #[serde(default)]
    pub lm_script: Option<PathBuf>,
    #[serde(default)]
    pub channel_subscribers: u64,
    /// Overrides the run-level domain for this video.
    #[serde(default)]
    pub domain: Option<Domain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub videos: Vec<VideoJob>,
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Corpus, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("corpus {}: {e}", path.display())))?;
        let corpus: Corpus = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("corpus {}: {e}", path.display())))?;
        let mut ids: Vec<&String> = corpus.videos.iter().map(|v| &v.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != corpus.videos.len() {
            return Err(PipelineError::Config("duplicate video ids in corpus".into()));
        }
        Ok(corpus)
    }
}

/// Random access over an `NMV1` file (frames addressed by index).
pub struct FrameFile {
    path: PathBuf,
    file: File,
    header: StreamHeader,
    payload_start: u64,
    frame_count: usize,
}

impl FrameFile {
    pub fn open(path: &Path) -> Result<FrameFile, FormatError> {
        let mut reader = BufReader::new(File::open(path)?);
        let fr = crate::frame::FrameReader::new(&mut reader)?;
        let header = *fr.header();
        drop(fr);
        let payload_start = reader.stream_position()?;
        let file = reader.into_inner();
        let total = file.metadata()?.len();
        let payload = total - payload_start;
        let frame_bytes = header.frame_bytes() as u64;
        if payload % frame_bytes != 0 {
            return Err(FormatError::Truncated { offset: payload });
        }
        Ok(FrameFile {
            path: path.to_path_buf(),
            file,
            header,
            payload_start,
            frame_count: (payload / frame_bytes) as usize,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn duration(&self) -> f64 {
        self.frame_count as f64 * self.header.fps_den as f64 / self.header.fps_num as f64
    }

    /// Fresh sequential reader over the whole stream.
    pub fn reader(&self) -> Result<crate::frame::FrameReader<BufReader<File>>, FormatError> {
        crate::frame::FrameReader::new(BufReader::new(File::open(&self.path)?))
    }

    pub fn read_frame(&mut self, index: usize) -> Result<Frame, FormatError> {
        assert!(index < self.frame_count, "frame index out of range");
        let frame_bytes = self.header.frame_bytes();
        self.file.seek(SeekFrom::Start(
            self.payload_start + (index * frame_bytes) as u64,
        ))?;
        let mut buf = vec![0u8; frame_bytes];
        self.file.read_exact(&mut buf)?;
        let t = self.header.timestamp(index);
        let plane = self.header.width as usize * self.header.height as usize;
        Ok(match self.header.planes {
            1 => Frame {
                t,
                width: self.header.width,
                height: self.header.height,
                luma: buf,
                color: None,
            },
            _ => {
                let mut luma = vec![0u8; plane];
                for i in 0..plane {
                    luma[i] =
                        crate::frame::luma_from_rgb(buf[i], buf[plane + i], buf[2 * plane + i]);
                }
                Frame {
                    t,
                    width: self.header.width,
                    height: self.header.height,
                    luma,
                    color: Some(buf),
                }
            }
        })
    }

    /// Read one luma row of one frame (planar color converted on the fly).
    pub fn read_luma_row(
        &mut self,
        index: usize,
        row: usize,
        buf: &mut [u8],
    ) -> Result<(), FormatError> {
        let w = self.header.width as usize;
        debug_assert_eq!(buf.len(), w);
        let frame_bytes = self.header.frame_bytes() as u64;
        let plane = (w * self.header.height as usize) as u64;
        let base = self.payload_start + index as u64 * frame_bytes + (row * w) as u64;
        if self.header.planes == 1 {
            self.file.seek(SeekFrom::Start(base))?;
            self.file.read_exact(buf)?;
        } else {
            let mut rgb = vec![0u8; 3 * w];
            for p in 0..3u64 {
                self.file.seek(SeekFrom::Start(base + p * plane))?;
                self.file.read_exact(&mut rgb[p as usize * w..(p as usize + 1) * w])?;
            }
            for x in 0..w {
                buf[x] = crate::frame::luma_from_rgb(rgb[x], rgb[w + x], rgb[2 * w + x]);
            }
        }
        Ok(())
    }
}

/// Stable chunk detection straight off a file: sequential pairwise
/// differencing, then SSIM verification via seeks.
pub fn chunks_from_file(
    video: &mut FrameFile,
    cfg: &StabilityConfig,
) -> Result<Vec<StableChunk>, String> {
    let mut decisions: Vec<DiffDecision> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut prev: Option<Frame> = None;
    for (i, frame) in video.reader().map_err(|e| e.to_string())?.enumerate() {
        let frame = frame.map_err(|e| e.to_string())?;
        times.push(frame.t);
        if let Some(p) = &prev {
            let diff = stability::frame_diff(p, &frame).map_err(|e| e.to_string())?;
            decisions.push(stability::adaptive_stability((i - 1, i), &diff, cfg));
        }
        prev = Some(frame);
    }
    stability::resolve_chunks(&decisions, &times, cfg, |s, e| {
        Ok::<_, String>((
            video.read_frame(s).map_err(|err| err.to_string())?,
            video.read_frame(e).map_err(|err| err.to_string())?,
        ))
    })
}

/// Total luma bytes a frame range would occupy in memory.
fn range_bytes(video: &FrameFile, start: usize, end: usize) -> usize {
    (end - start + 1) * video.header().width as usize * video.header().height as usize
}

/// Chunks whose frames fit this budget are loaded whole; larger ones take
/// the banded row-fetch path.
const MEDIAN_MEMORY_BUDGET: usize = 256 << 20;

/// Median background of a frame range, memory-aware.
pub fn median_from_file(
    video: &mut FrameFile,
    start: usize,
    end: usize,
) -> Result<Frame, String> {
    let (w, h) = (
        video.header().width as usize,
        video.header().height as usize,
    );
    let n = end - start + 1;
    if range_bytes(video, start, end) <= MEDIAN_MEMORY_BUDGET {
        let mut frames = Vec::with_capacity(n);
        for i in start..=end {
            frames.push(video.read_frame(i).map_err(|e| e.to_string())?);
        }
        return trace::median_frame(&frames).map_err(|e| e.to_string());
    }
    let luma = trace::median_plane::<String>(n, w, h, |j, y, buf| {
        video
            .read_luma_row(start + j, y, buf)
            .map_err(|e| e.to_string())
    })?;
    Ok(Frame {
        t: video.header().timestamp(start),
        width: w as u32,
        height: h as u32,
        luma,
        color: None,
    })
}

/// Extract traces and bounding boxes for every chunk, streaming per frame.
pub fn traces_from_file(
    video: &mut FrameFile,
    chunks: &[StableChunk],
    masks: &[MaskRegion],
    cfg: &crate::trace::TraceConfig,
) -> Result<(Vec<Trace>, Vec<BBox>), String> {
    let mut traces = Vec::new();
    let mut bboxes = Vec::new();
    for (chunk_id, chunk) in chunks.iter().enumerate() {
        let background = median_from_file(video, chunk.frame_start, chunk.frame_end)?;
        let mut points = Vec::new();
        for i in chunk.frame_start..=chunk.frame_end {
            let frame = video.read_frame(i).map_err(|e| e.to_string())?;
            if let Some(mut p) =
                trace::locate_cursor(&frame, &background, masks, cfg.noise_threshold)
                    .map_err(|e| e.to_string())?
            {
                p.t = frame.t - chunk.t_start;
                points.push(p);
            }
        }
        if points.len() >= cfg.min_trace_points {
            let t = Trace { chunk_id, points, image_ref: None };
            bboxes.push(trace::trace_to_bbox(&t).map_err(|e| e.to_string())?);
            traces.push(t);
        }
    }
    Ok((traces, bboxes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: String,
    pub status: StageStatus,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub id: String,
    pub gate: GateReport,
    /// Set when the pipeline stopped early (at the named stage).
    pub halted_after: Option<String>,
    pub stages: Vec<StageRun>,
    pub sample_count: usize,
    pub trace_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub videos: Vec<VideoOutcome>,
    pub manifest: Option<Manifest>,
    pub report: Option<DatasetReport>,
}

impl RunSummary {
    /// True when every stage of every video came from cache.
    pub fn all_cached(&self) -> bool {
        self.videos
            .iter()
            .all(|v| v.stages.iter().all(|s| s.status == StageStatus::Cached))
    }
}

fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn hash_optional(path: &Option<PathBuf>) -> Result<String, std::io::Error> {
    match path {
        Some(p) => sha256_file(p),
        None => Ok("none".to_string()),
    }
}

const STAGE_VERSION: u32 = 1;

struct StageCache<'a> {
    root: &'a Path,
    video: &'a str,
    runs: Vec<StageRun>,
}

impl<'a> StageCache<'a> {
    fn new(root: &'a Path, video: &'a str) -> Self {
        StageCache { root, video, runs: Vec::new() }
    }

    fn key(&self, stage: &str, parts: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update(STAGE_VERSION.to_le_bytes());
        for part in parts {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Load the stage payload from cache or compute and store it.
    fn run<T: Serialize + DeserializeOwned>(
        &mut self,
        stage: &'static str,
        parts: &[&str],
        compute: impl FnOnce() -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        let key = self.key(stage, parts);
        let dir = self.root.join(stage).join(&key);
        let payload_path = dir.join("payload.json");
        let fail = |message: String| PipelineError::Stage {
            stage,
            video: self.video.to_string(),
            key: key.clone(),
            message,
        };
        if payload_path.exists() {
            let text = std::fs::read_to_string(&payload_path).map_err(|e| fail(e.to_string()))?;
            match serde_json::from_str::<T>(&text) {
                Ok(value) => {
                    self.runs.push(StageRun {
                        stage: stage.to_string(),
                        status: StageStatus::Cached,
                        key,
                    });
                    return Ok(value);
                }
                // unreadable cache entry: fall through and recompute
                Err(_) => {
                    let _ = std::fs::remove_file(&payload_path);
                }
            }
        }
        let value = compute().map_err(fail)?;
        std::fs::create_dir_all(&dir).map_err(|e| fail(e.to_string()))?;
        let text = serde_json::to_string(&value).map_err(|e| fail(e.to_string()))?;
        std::fs::write(&payload_path, text).map_err(|e| fail(e.to_string()))?;
        self.runs.push(StageRun {
            stage: stage.to_string(),
            status: StageStatus::Computed,
            key,
        });
        Ok(value)
    }
}

/// Cached output of the keyframes stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframesPayload {
    pub threshold: f64,
    pub keyframes: Vec<KeyFrame>,
    pub summary: ClassifySummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TracesPayload {
    traces: Vec<Trace>,
    bboxes: Vec<BBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranscriptPayload {
    corrected: Vec<TranscriptSegment>,
    records: Vec<crate::transcript::CorrectionRecord>,
    metrics: QualityMetrics,
    total_words: usize,
}

/// A PNG-encoded representative image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedImage {
    pub id: String,
    pub t: f64,
    pub chunk_index: usize,
    pub method: RepMethod,
    #[serde(with = "png_base64")]
    pub png: Vec<u8>,
}

mod png_base64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// Output of the align stage: samples plus their encoded images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignOutput {
    pub samples: Vec<AlignedSample>,
    pub images: Vec<EncodedImage>,
}

struct Clients {
    classifier: Box<dyn DomainClassifier>,
    embedding: Box<dyn EmbeddingClient>,
    lm: Box<dyn LmClient>,
    masks: Vec<MaskRegion>,
    speech: Option<Box<dyn SpeechSegmenter>>,
}

fn build_clients(job: &VideoJob) -> Result<Clients, String> {
    let classifier: Box<dyn DomainClassifier> = match &job.classifier_script {
        Some(p) => Box::new(ScriptedClassifier::from_path(p).map_err(|e| e.to_string())?),
        None => Box::new(ConstClassifier::medical(1.0)),
    };
    let embedding: Box<dyn EmbeddingClient> = match &job.embedding_script {
        Some(p) => Box::new(ScriptedEmbedding::from_path(p).map_err(|e| e.to_string())?),
        None => Box::new(LumaDownsampleEmbedding),
    };
    let lm: Box<dyn LmClient> = match &job.lm_script {
        Some(p) => Box::new(ScriptedLm::from_path(p).map_err(|e| e.to_string())?),
        None => Box::new(ScriptedLm::echo()),
    };
    let masks = match &job.masks {
        Some(p) => {
            let detector = ScriptedFaceDetector::from_path(p).map_err(|e| e.to_string())?;
            // the mock ignores pixels; hand it an empty probe frame
            detector
                .detect(&Frame::new(0.0, 1, 1, vec![0]))
                .map_err(|e| e.to_string())?
        }
        None => Vec::new(),
    };
    let speech: Option<Box<dyn SpeechSegmenter>> = match &job.speech_intervals {
        Some(p) => Some(Box::new(ScriptedSpeech::from_path(p).map_err(|e| e.to_string())?)),
        None => None,
    };
    Ok(Clients { classifier, embedding, lm, masks, speech })
}

fn resolve_profile(cfg: &RunConfig, domain: Domain) -> DomainProfile {
    let mut profile = DomainProfile::for_domain(domain);
    if let Some(t) = cfg.keyframe.scene_change_threshold {
        profile.scene_change_threshold = t;
    }
    if let Some(p) = cfg.gating.narrative_streak_percent {
        profile.narrative_streak_percent = p;
    }
    if let Some(s) = cfg.gating.min_speech_seconds {
        profile.min_speech_seconds = s;
    }
    profile
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable"))?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Interface record for the `chunks` subcommand output.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub start_s: f64,
    pub end_s: f64,
    pub verified: bool,
}

impl From<&StableChunk> for ChunkRecord {
    fn from(c: &StableChunk) -> Self {
        ChunkRecord { start_s: c.t_start, end_s: c.t_end, verified: c.verified }
    }
}

/// Interface record for the `traces` subcommand output (one line per point).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TracePointRecord {
    pub chunk_id: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Interface record for bounding boxes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BBoxRecord {
    pub chunk_id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

pub fn trace_point_records(traces: &[Trace]) -> Vec<TracePointRecord> {
    traces
        .iter()
        .flat_map(|t| {
            t.points.iter().map(|p| TracePointRecord {
                chunk_id: t.chunk_id,
                t: p.t,
                x: p.x,
                y: p.y,
                confidence: p.confidence,
            })
        })
        .collect()
}

pub fn bbox_records(traces: &[Trace], bboxes: &[BBox]) -> Vec<BBoxRecord> {
    traces
        .iter()
        .zip(bboxes)
        .map(|(t, b)| BBoxRecord {
            chunk_id: t.chunk_id,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        })
        .collect()
}

/// 16 kHz mono silence standing in for the first minute of audio when a
/// speech-segmenter mock is consulted (there is no real audio path).
fn silence_pcm(duration: f64) -> Vec<i16> {
    vec![0i16; (duration.min(60.0).max(0.0) * 16_000.0) as usize]
}

fn video_out_dir(cfg: &RunConfig, id: &str) -> PathBuf {
    cfg.output_dir.join("videos").join(id)
}

/// Run the whole per-video pipeline. Returns the outcome and, when the
/// video passes the gate, its aligned samples ready for export.
pub fn run_video(
    cfg: &RunConfig,
    job: &VideoJob,
) -> Result<(VideoOutcome, Vec<NarrativeSample>), PipelineError> {
    let domain = job.domain.unwrap_or(cfg.domain);
    let profile = resolve_profile(cfg, domain);
    let out_dir = video_out_dir(cfg, &job.id);
    std::fs::create_dir_all(&out_dir)?;
    let cache_root = cfg.output_dir.join("cache");
    let mut cache = StageCache::new(&cache_root, &job.id);

    let stage_fail = |stage: &'static str, message: String| PipelineError::Stage {
        stage,
        video: job.id.clone(),
        key: "-".into(),
        message,
    };

    let video_hash = sha256_file(&job.frames).map_err(|e| {
        stage_fail("gate", format!("hashing {}: {e}", job.frames.display()))
    })?;
    let transcript_hash =
        hash_optional(&job.transcript).map_err(|e| stage_fail("gate", e.to_string()))?;
    let scripts_hash = {
        let mut parts = Vec::new();
        for p in [
            &job.speech_intervals,
            &job.masks,
            &job.classifier_script,
            &job.embedding_script,
            &job.lm_script,
        ] {
            parts.push(hash_optional(p).map_err(|e| stage_fail("gate", e.to_string()))?);
        }
        parts.join(",")
    };

    let clients = build_clients(job).map_err(|e| stage_fail("gate", e))?;
    let mut video = FrameFile::open(&job.frames)
        .map_err(|e| stage_fail("gate", format!("{}: {e}", job.frames.display())))?;
    let duration = video.duration();

    // Transcript segments are needed by both gating (non-static narrative)
    // and the transcript stage.
    let raw_segments: Vec<TranscriptSegment> = match &job.transcript {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| stage_fail("transcript", format!("{}: {e}", path.display())))?;
            transcript::read_transcript(BufReader::new(file))
                .map_err(|e| stage_fail("transcript", e.to_string()))?
        }
        None => Vec::new(),
    };

    let has_speech = if !raw_segments.is_empty() {
        true
    } else if let Some(speech) = &clients.speech {
        !speech
            .segment(&silence_pcm(duration), 16_000)
            .map_err(|e| stage_fail("gate", e.to_string()))?
            .is_empty()
    } else {
        false
    };
    let meta = VideoMeta {
        duration,
        has_speech,
        channel_subscribers: job.channel_subscribers,
        domain,
    };

    // Early gate on metadata alone: no point detecting key-frames for a
    // video that can never pass.
    let meta_failures = gating::gate_meta_rules(&meta);
    if !meta_failures.is_empty() {
        let report = GateReport {
            passed: false,
            failed_rules: meta_failures,
            medical_fraction: 0.0,
            narrative: None,
            streak_count: 0,
        };
        write_json(&out_dir.join("gate.json"), &report)?;
        let outcome = VideoOutcome {
            id: job.id.clone(),
            gate: report,
            halted_after: Some("gate".into()),
            stages: cache.runs,
            sample_count: 0,
            trace_count: 0,
        };
        return Ok((outcome, Vec::new()));
    }

    // keyframes stage
    let kf_cfg_subset = serde_json::json!({
        "domain": domain,
        "profile_threshold": profile.scene_change_threshold,
        "override": cfg.keyframe.scene_change_threshold,
        "is_static": profile.is_static,
    })
    .to_string();
    let kf_payload: KeyframesPayload = cache.run(
        "keyframes",
        &[&kf_cfg_subset, &video_hash, &scripts_hash],
        || {
            let threshold = if profile.is_static || cfg.keyframe.scene_change_threshold.is_some() {
                profile.scene_change_threshold
            } else {
                let reader = video.reader().map_err(|e| e.to_string())?;
                keyframe::adaptive_scene_threshold(
                    reader.map(|f| f.expect("scanned during open")),
                )
                .map_err(|e| e.to_string())?
            };
            let reader = video.reader().map_err(|e| e.to_string())?;
            let mut detected = keyframe::detect_keyframes_with_threshold(
                reader.map(|f| f.expect("scanned during open")),
                threshold,
            )
            .map_err(|e| e.to_string())?;
            let summary =
                keyframe::classify_keyframes(&mut detected, clients.classifier.as_ref(), domain)
                    .map_err(|e| e.to_string())?;
            Ok(KeyframesPayload {
                threshold,
                keyframes: detected.keyframes,
                summary,
            })
        },
    )?;
    write_json(&out_dir.join("keyframes.json"), &kf_payload)?;

    // gate stage: fraction plus narrative assessment
    let gate_cfg_subset = serde_json::json!({
        "domain": domain,
        "profile": profile,
        "gating": cfg.gating,
        "streak_candidates": cfg.keyframe.streak_candidates,
        "subscribers": job.channel_subscribers,
    })
    .to_string();
    let gate_report: GateReport = cache.run(
        "gate",
        &[&gate_cfg_subset, &video_hash, &transcript_hash, &scripts_hash],
        || {
            let base = gating::gate_video(&meta, kf_payload.summary.medical_fraction, &profile);
            let (narrative, streaks) = if profile.is_static {
                // re-fetch the key-frame pixel data for embeddings
                let mut detected = DetectedKeyframes {
                    keyframes: kf_payload.keyframes.clone(),
                    frames: Vec::with_capacity(kf_payload.keyframes.len()),
                };
                for kf in &kf_payload.keyframes {
                    detected.frames.push(
                        video.read_frame(kf.frame_index).map_err(|e| e.to_string())?,
                    );
                }
                let stats = gating::narrative_streaks(
                    &detected,
                    clients.embedding.as_ref(),
                    cfg.keyframe.streak_candidates,
                );
                let narrative =
                    gating::is_narrative(stats.streaks, stats.candidates, &profile).ok();
                (narrative, stats.streaks)
            } else {
                let narrative = gating::is_narrative_nonstatic(
                    &kf_payload.keyframes,
                    &raw_segments,
                    &profile,
                    (cfg.gating.speech_window_before, cfg.gating.speech_window_after),
                );
                (Some(narrative), 0)
            };
            Ok(base.with_narrative(narrative, streaks))
        },
    )?;
    write_json(&out_dir.join("gate.json"), &gate_report)?;
    if !gate_report.passed {
        let outcome = VideoOutcome {
            id: job.id.clone(),
            gate: gate_report,
            halted_after: Some("gate".into()),
            stages: cache.runs,
            sample_count: 0,
            trace_count: 0,
        };
        return Ok((outcome, Vec::new()));
    }

    // chunks stage
    let stability_cfg = StabilityConfig { seed: cfg.seed, ..cfg.stability.clone() };
    let chunks_cfg_subset = serde_json::to_string(&stability_cfg).expect("serializable");
    let chunks: Vec<StableChunk> =
        cache.run("chunks", &[&chunks_cfg_subset, &video_hash], || {
            chunks_from_file(&mut video, &stability_cfg)
        })?;
    let chunk_records: Vec<ChunkRecord> = chunks.iter().map(ChunkRecord::from).collect();
    write_jsonl(&out_dir.join("chunks.jsonl"), &chunk_records)?;

    // traces stage
    let trace_cfg_subset = serde_json::to_string(&cfg.trace).expect("serializable");
    let traces_payload: TracesPayload = cache.run(
        "traces",
        &[&trace_cfg_subset, &chunks_cfg_subset, &video_hash, &scripts_hash],
        || {
            let (traces, bboxes) =
                traces_from_file(&mut video, &chunks, &clients.masks, &cfg.trace)?;
            Ok(TracesPayload { traces, bboxes })
        },
    )?;
    write_jsonl(
        &out_dir.join("traces.jsonl"),
        &trace_point_records(&traces_payload.traces),
    )?;
    write_jsonl(
        &out_dir.join("bboxes.jsonl"),
        &bbox_records(&traces_payload.traces, &traces_payload.bboxes),
    )?;

    // transcript stage
    let transcript_cfg_subset = serde_json::to_string(&cfg.transcript).expect("serializable");
    let lexicon_hash =
        hash_optional(&cfg.transcript.lexicon).map_err(|e| stage_fail("transcript", e.to_string()))?;
    let transcript_payload: TranscriptPayload = cache.run(
        "transcript",
        &[&transcript_cfg_subset, &transcript_hash, &lexicon_hash, &scripts_hash],
        || {
            if raw_segments.is_empty() {
                return Ok(TranscriptPayload {
                    corrected: Vec::new(),
                    records: Vec::new(),
                    metrics: transcript::quality_metrics(&[], 0),
                    total_words: 0,
                });
            }
            let lexicon_path = cfg
                .transcript
                .lexicon
                .as_ref()
                .ok_or_else(|| "transcript present but no lexicon configured".to_string())?;
            let lexicon = Lexicon::from_path(lexicon_path).map_err(|e| e.to_string())?;
            let candidates =
                transcript::detect_errors(&raw_segments, &lexicon, cfg.transcript.ngram_cutoff);
            let (corrected, records) =
                transcript::correct(&raw_segments, &candidates, clients.lm.as_ref(), &lexicon);
            let total_words = transcript::count_words(&raw_segments);
            let metrics = transcript::quality_metrics(&records, total_words);
            Ok(TranscriptPayload { corrected, records, metrics, total_words })
        },
    )?;
    {
        let mut buf = Vec::new();
        transcript::write_transcript(&mut buf, &transcript_payload.corrected)
            .map_err(|e| stage_fail("transcript", e.to_string()))?;
        std::fs::write(out_dir.join("corrected.jsonl"), buf)?;
    }
    write_json(&out_dir.join("corrections.json"), &transcript_payload.records)?;
    write_json(&out_dir.join("metrics.json"), &transcript_payload.metrics)?;

    // align stage
    let align_cfg_subset = serde_json::to_string(&cfg.align).expect("serializable");
    let align_payload: AlignOutput = cache.run(
        "align",
        &[
            &align_cfg_subset,
            &transcript_cfg_subset,
            &video_hash,
            &transcript_hash,
            &scripts_hash,
            &chunks_cfg_subset,
        ],
        || {
            align_video(
                cfg,
                &job.id,
                domain,
                &mut video,
                &kf_payload.keyframes,
                &chunks,
                &traces_payload.traces,
                &traces_payload.bboxes,
                &transcript_payload.corrected,
                clients.lm.as_ref(),
                clients.classifier.as_ref(),
            )
        },
    )?;
    write_json(&out_dir.join("aligned.json"), &align_payload.samples)?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;
    for image in &align_payload.images {
        std::fs::write(images_dir.join(format!("{}.png", image.id)), &image.png)?;
    }

    let samples: Vec<NarrativeSample> = align_payload
        .samples
        .iter()
        .map(|s| {
            let png = align_payload
                .images
                .iter()
                .find(|i| i.id == s.image_id)
                .map(|i| i.png.clone())
                .unwrap_or_default();
            NarrativeSample { key: s.image_id.clone(), png, record: sample_record(s) }
        })
        .collect();

    let outcome = VideoOutcome {
        id: job.id.clone(),
        gate: gate_report,
        halted_after: None,
        stages: cache.runs,
        sample_count: samples.len(),
        trace_count: traces_payload.traces.len(),
    };
    Ok((outcome, samples))
}

/// The frozen export record for one aligned sample.
pub fn sample_record(s: &AlignedSample) -> SampleRecord {
    SampleRecord {
        id: s.image_id.clone(),
        video_id: s.video_id.clone(),
        domain: s.domain,
        subdomains: s.subdomains.clone(),
        cross_domains: s.cross_domains.clone(),
        method: s.method,
        chunk_start_s: s.chunk_start,
        chunk_end_s: s.chunk_end,
        width: s.width,
        height: s.height,
        medical_texts: s.medical_texts.clone(),
        roi_texts: s.roi_texts.clone(),
        traces: s.traces.clone(),
        bboxes: s.bboxes.clone(),
    }
}

/// Assemble the aligned samples of one video from its prior stage outputs:
/// representative images per padded scene chunk, keyword-overlap text links,
/// trace attachment, subdomain and cross-domain tags.
#[allow(clippy::too_many_arguments)]
pub fn align_video(
    cfg: &RunConfig,
    video_id: &str,
    domain: Domain,
    video: &mut FrameFile,
    keyframes: &[KeyFrame],
    chunks: &[StableChunk],
    all_traces: &[Trace],
    all_bboxes: &[BBox],
    corrected: &[TranscriptSegment],
    lm: &dyn LmClient,
    classifier: &dyn DomainClassifier,
) -> Result<AlignOutput, String> {
    let duration = video.duration();
    let fps = video.header().fps();
    let scene_chunks = keyframe::build_scene_chunks(keyframes, duration);
    let padded = align::pad_chunks(&scene_chunks, cfg.align.pad_time, duration)
        .map_err(|e| e.to_string())?;
    let stoplist = crate::stopwords::default_set();
    let timeline = align::raw_keyword_timeline(corrected, &stoplist);
    let window = AlignWindow { lookback: cfg.align.lookback, lookahead: cfg.align.lookahead };

    // video-level LM passes
    let full_text = corrected
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let subdomains = if full_text.is_empty() || cfg.transcript.subdomain_vocabulary.is_empty() {
        Vec::new()
    } else {
        align::classify_subdomains(&full_text, lm, &cfg.transcript.subdomain_vocabulary)
            .unwrap_or_default()
    };

    let mut images: Vec<EncodedImage> = Vec::new();
    let mut rep_images: Vec<RepresentativeImage> = Vec::new();
    let mut samples: Vec<AlignedSample> = Vec::new();

    for (ci, chunk) in padded.iter().enumerate() {
        // representative image(s): median of the longest stable chunk in
        // the padded interval, else de-duplicated key-frames
        let overlapping: Vec<&StableChunk> = chunks
            .iter()
            .filter(|sc| sc.t_start < chunk.t_end && sc.t_end > chunk.t_start)
            .collect();
        let mut chunk_images: Vec<RepresentativeImage> = Vec::new();
        if let Some(best) = overlapping.iter().max_by(|a, b| {
            let ov_a = a.t_end.min(chunk.t_end) - a.t_start.max(chunk.t_start);
            let ov_b = b.t_end.min(chunk.t_end) - b.t_start.max(chunk.t_start);
            ov_a.total_cmp(&ov_b)
        }) {
            let lo = best
                .frame_start
                .max((chunk.t_start * fps).ceil() as usize);
            let hi = best
                .frame_end
                .min((chunk.t_end * fps).floor() as usize)
                .min(video.frame_count().saturating_sub(1));
            if lo <= hi {
                let frame = median_from_file(video, lo, hi)?;
                let t = (video.header().timestamp(lo) + video.header().timestamp(hi)) / 2.0;
                chunk_images.push(RepresentativeImage {
                    id: format!("{video_id}-c{ci:03}"),
                    chunk_index: ci,
                    t,
                    frame,
                    method: RepMethod::MedianOfStable,
                });
            }
        }
        if chunk_images.is_empty() {
            let kf_in_chunk: Vec<&KeyFrame> = keyframes
                .iter()
                .filter(|k| k.t >= chunk.t_start && k.t < chunk.t_end)
                .collect();
            let mut frames = Vec::with_capacity(kf_in_chunk.len());
            for kf in &kf_in_chunk {
                frames.push(video.read_frame(kf.frame_index).map_err(|e| e.to_string())?);
            }
            for kept in align::dedupe_keyframes(&frames, cfg.align.dedupe_threshold) {
                let kf = kf_in_chunk[kept];
                chunk_images.push(RepresentativeImage {
                    id: format!("{video_id}-c{ci:03}-k{:04}", kf.frame_index),
                    chunk_index: ci,
                    t: kf.t,
                    frame: frames[kept].clone(),
                    method: RepMethod::DedupedKeyframe,
                });
            }
        }
        if chunk_images.is_empty() {
            continue;
        }

        // texts for this chunk
        let seg_indices: Vec<usize> = corrected
            .iter()
            .enumerate()
            .filter(|(_, s)| s.start < chunk.t_end && s.end > chunk.t_start)
            .map(|(i, _)| i)
            .collect();
        let chunk_segments: Vec<TranscriptSegment> =
            seg_indices.iter().map(|&i| corrected[i].clone()).collect();
        let texts =
            transcript::extract_medical_roi(&chunk_segments, lm, &cfg.transcript.deictic)
                .unwrap_or_default();
        let keyword_sets: Vec<KeywordSet> = texts
            .iter()
            .map(|t| KeywordSet::for_text(&t.text, &stoplist))
            .collect();

        // traces attached to this chunk (stable-chunk interval overlap),
        // carried by the chunk's first image
        let chunk_traces: Vec<(Trace, BBox)> = all_traces
            .iter()
            .zip(all_bboxes)
            .filter(|(t, _)| {
                let sc = &chunks[t.chunk_id];
                sc.t_start < chunk.t_end && sc.t_end > chunk.t_start
            })
            .map(|(t, b)| (t.clone(), *b))
            .collect();

        for (ii, image) in chunk_images.iter().enumerate() {
            let links = align::map_image_to_text(image.t, &keyword_sets, &timeline, window);
            let medical_texts: Vec<String> = links
                .iter()
                .filter(|&&i| texts[i].kind == transcript::TextKind::Medical)
                .map(|&i| texts[i].text.clone())
                .collect();
            let roi_texts: Vec<String> = links
                .iter()
                .filter(|&&i| texts[i].kind == transcript::TextKind::Roi)
                .map(|&i| texts[i].text.clone())
                .collect();
            let (traces, bboxes): (Vec<Trace>, Vec<BBox>) = if ii == 0 {
                chunk_traces
                    .iter()
                    .map(|(t, b)| {
                        let mut t = t.clone();
                        t.image_ref = Some(image.id.clone());
                        (t, *b)
                    })
                    .unzip()
            } else {
                (Vec::new(), Vec::new())
            };
            samples.push(AlignedSample {
                image_id: image.id.clone(),
                video_id: video_id.to_string(),
                chunk_index: ci,
                chunk_start: chunk.t_start,
                chunk_end: chunk.t_end,
                method: image.method,
                medical_texts,
                roi_texts,
                traces,
                bboxes,
                domain,
                subdomains: subdomains.clone(),
                cross_domains: Vec::new(),
                width: image.frame.width,
                height: image.frame.height,
            });
        }
        rep_images.extend(chunk_images);
    }

    // cross-domain tags: one LM proposal per video, classifier per image
    if !full_text.is_empty() && !rep_images.is_empty() {
        if let Ok(tags) =
            align::detect_cross_domain(&full_text, lm, classifier, &rep_images)
        {
            for (image, tags) in rep_images.iter().zip(tags) {
                for sample in samples.iter_mut().filter(|s| s.image_id == image.id) {
                    sample.cross_domains = tags.clone();
                }
            }
        }
    }

    for image in &rep_images {
        images.push(EncodedImage {
            id: image.id.clone(),
            t: image.t,
            chunk_index: image.chunk_index,
            method: image.method,
            png: crate::frame::encode_png(&image.frame).map_err(|e| e.to_string())?,
        });
    }
    Ok(AlignOutput { samples, images })
}

/// Execute the configured corpus: per-video pipelines over a bounded worker
/// pool, then one export pass (shards, manifest, report) by the
/// coordinator.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let corpus_path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| PipelineError::Config("config has no corpus path".into()))?;
    let corpus = Corpus::load(corpus_path)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("resolved_config.toml"), cfg.to_toml())?;

    let workers = cfg.workers.max(1).min(corpus.videos.len().max(1));
    let next_job = AtomicUsize::new(0);
    type JobResult = (usize, Result<(VideoOutcome, Vec<NarrativeSample>), PipelineError>);
    let results: Mutex<Vec<JobResult>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next_job.fetch_add(1, Ordering::SeqCst);
                if index >= corpus.videos.len() {
                    break;
                }
                let result = run_video(cfg, &corpus.videos[index]);
                results.lock().expect("worker poisoned").push((index, result));
            });
        }
    });

    let mut collected = results.into_inner().expect("workers joined");
    collected.sort_by_key(|(i, _)| *i);
    let mut videos = Vec::new();
    let mut samples = Vec::new();
    for (_, result) in collected {
        let (outcome, mut video_samples) = result?;
        videos.push(outcome);
        samples.append(&mut video_samples);
    }

    let shards_dir = cfg.output_dir.join("shards");
    let manifest = export::write_shards(&samples, cfg.export.shard_size, &shards_dir)?;
    let report = export::characterize(&samples);
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    std::fs::write(cfg.output_dir.join("report.txt"), export::render_table(&report))?;

    Ok(RunSummary {
        videos,
        manifest: Some(manifest),
        report: Some(report),
    })
}
