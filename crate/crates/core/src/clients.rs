//! Pluggable boundaries for every ML service the pipeline consults, plus
//! deterministic script-driven mocks.
//!
//! Real deployments put a model behind each trait; the shipped mocks read
//! their answers from sidecar script files so that the full pipeline runs —
//! and is testable bit-for-bit — without any model dependency.
//!
//! Wire contracts:
//! - classifier: request is a PNG-encoded frame plus the domain name,
//!   response is `{label, confidence}`
//! - speech segmenter: request is mono PCM of the first 60 s, response is a
//!   list of speech intervals
//! - language model: request is `{task, context, text}`, response `{text}`;
//!   prompt templates live in `prompts/` next to this crate
//! - face detector: request is a frame, response is mask rectangles

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, Rect};
use crate::keyframe::Domain;
use crate::trace::{MaskRegion, MaskSource};

#[derive(Error, Debug)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed script: {0}")]
    Script(String),
    #[error("io error reading script: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    #[serde(alias = "label")]
    pub medical: bool,
    pub confidence: f64,
}

pub trait DomainClassifier: Send + Sync {
    /// Classify one PNG-encoded key-frame for `domain`. `frame_index` is
    /// request metadata that lets scripted mocks address frames.
    fn classify(
        &self,
        frame_index: usize,
        png: &[u8],
        domain: Domain,
    ) -> Result<Classification, ClientError>;
}

pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, frame_index: usize, frame: &Frame) -> Result<Vec<f64>, ClientError>;
}

pub trait SpeechSegmenter: Send + Sync {
    /// Speech intervals (seconds) within the supplied mono PCM.
    fn segment(&self, pcm: &[i16], sample_rate: u32) -> Result<Vec<(f64, f64)>, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmTask {
    Correct,
    Extract,
    Subdomain,
    Crossdomain,
}

impl LmTask {
    pub fn name(&self) -> &'static str {
        match self {
            LmTask::Correct => "correct",
            LmTask::Extract => "extract",
            LmTask::Subdomain => "subdomain",
            LmTask::Crossdomain => "crossdomain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub task: LmTask,
    pub context: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
}

pub trait LmClient: Send + Sync {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, ClientError>;
}

pub trait FaceDetector: Send + Sync {
    fn detect(&self, frame: &Frame) -> Result<Vec<MaskRegion>, ClientError>;
}

/// Prompt templates for the language-model tasks, stored as files and
/// rendered with `{context}` / `{text}` substitution.
pub mod prompts {
    use super::LmTask;

    pub const CORRECT: &str = include_str!("../prompts/correct.txt");
    pub const EXTRACT: &str = include_str!("../prompts/extract.txt");
    pub const SUBDOMAIN: &str = include_str!("../prompts/subdomain.txt");
    pub const CROSSDOMAIN: &str = include_str!("../prompts/crossdomain.txt");

    pub fn template(task: LmTask) -> &'static str {
        match task {
            LmTask::Correct => CORRECT,
            LmTask::Extract => EXTRACT,
            LmTask::Subdomain => SUBDOMAIN,
            LmTask::Crossdomain => CROSSDOMAIN,
        }
    }

    pub fn render(task: LmTask, context: &str, text: &str) -> String {
        render_template(template(task), context, text)
    }

    pub fn render_template(template: &str, context: &str, text: &str) -> String {
        template.replace("{context}", context).replace("{text}", text)
    }
}

/// Classifier that answers the same label for everything.
#[derive(Debug, Clone, Copy)]
pub struct ConstClassifier {
    pub medical: bool,
    pub confidence: f64,
}

impl ConstClassifier {
    pub fn medical(confidence: f64) -> Self {
        ConstClassifier { medical: true, confidence }
    }

    pub fn non_medical(confidence: f64) -> Self {
        ConstClassifier { medical: false, confidence }
    }
}

impl DomainClassifier for ConstClassifier {
    fn classify(&self, _: usize, _: &[u8], _: Domain) -> Result<Classification, ClientError> {
        Ok(Classification { medical: self.medical, confidence: self.confidence })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptOutcome {
    Label(Classification),
    Directive(String), // "fail"
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierSection {
    default: Option<Classification>,
    #[serde(default)]
    frames: BTreeMap<String, ScriptOutcome>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierScript {
    default: Option<Classification>,
    #[serde(default)]
    frames: BTreeMap<String, ScriptOutcome>,
    /// Per-domain overrides, keyed by domain name.
    #[serde(default)]
    domains: BTreeMap<String, ClassifierSection>,
}

/// Mock classifier reading `frame_index -> label` from a JSON script file.
pub struct ScriptedClassifier {
    script: ClassifierScript,
}

impl ScriptedClassifier {
    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let script: ClassifierScript =
            serde_json::from_str(json).map_err(|e| ClientError::Script(e.to_string()))?;
        Ok(ScriptedClassifier { script })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl DomainClassifier for ScriptedClassifier {
    fn classify(
        &self,
        frame_index: usize,
        _png: &[u8],
        domain: Domain,
    ) -> Result<Classification, ClientError> {
        let key = frame_index.to_string();
        let (frames, default) = match self.script.domains.get(domain.name()) {
            Some(section) => (&section.frames, section.default.or(self.script.default)),
            None => (&self.script.frames, self.script.default),
        };
        match frames.get(&key) {
            Some(ScriptOutcome::Label(c)) => Ok(*c),
            Some(ScriptOutcome::Directive(d)) if d == "fail" => {
                Err(ClientError::Transport(format!("scripted failure for frame {key}")))
            }
            Some(ScriptOutcome::Directive(d)) => {
                Err(ClientError::Script(format!("unknown directive {d:?}")))
            }
            None => default.ok_or_else(|| {
                ClientError::Script(format!("no label for frame {key} and no default"))
            }),
        }
    }
}

/// Default embedding mock: the frame downsampled to a 32x32 luma grid
/// (block means), flattened. Deterministic, and cosine similarity over it
/// behaves the way the streak rule expects (identical frames embed
/// identically; unrelated content decorrelates).
#[derive(Debug, Clone, Copy, Default)]
pub struct LumaDownsampleEmbedding;

pub const EMBED_GRID: usize = 32;

impl EmbeddingClient for LumaDownsampleEmbedding {
    fn embed(&self, _: usize, frame: &Frame) -> Result<Vec<f64>, ClientError> {
        let (w, h) = (frame.width as usize, frame.height as usize);
        let mut out = vec![0.0f64; EMBED_GRID * EMBED_GRID];
        for gy in 0..EMBED_GRID {
            let y0 = gy * h / EMBED_GRID;
            let y1 = ((gy + 1) * h / EMBED_GRID).max(y0 + 1).min(h);
            for gx in 0..EMBED_GRID {
                let x0 = gx * w / EMBED_GRID;
                let x1 = ((gx + 1) * w / EMBED_GRID).max(x0 + 1).min(w);
                let mut sum = 0u64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += frame.luma[y * w + x] as u64;
                    }
                }
                out[gy * EMBED_GRID + gx] = sum as f64 / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingScript {
    #[serde(default)]
    frames: HashMap<String, Vec<f64>>,
    /// Vector returned for any frame without an entry.
    #[serde(default)]
    default: Option<Vec<f64>>,
    #[serde(default)]
    fail: Vec<usize>,
}

/// Mock embedding client with per-frame scripted vectors; frames without an
/// entry use the script's default vector, else fall back to the
/// luma-downsample embedding.
#[derive(Default)]
pub struct ScriptedEmbedding {
    script: EmbeddingScript,
    fallback: LumaDownsampleEmbedding,
}

impl ScriptedEmbedding {
    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let script: EmbeddingScript =
            serde_json::from_str(json).map_err(|e| ClientError::Script(e.to_string()))?;
        Ok(ScriptedEmbedding { script, fallback: LumaDownsampleEmbedding })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl EmbeddingClient for ScriptedEmbedding {
    fn embed(&self, frame_index: usize, frame: &Frame) -> Result<Vec<f64>, ClientError> {
        if self.script.fail.contains(&frame_index) {
            return Err(ClientError::Transport(format!(
                "scripted embedding failure for frame {frame_index}"
            )));
        }
        match self.script.frames.get(&frame_index.to_string()) {
            Some(v) => Ok(v.clone()),
            None => match &self.script.default {
                Some(v) => Ok(v.clone()),
                None => self.fallback.embed(frame_index, frame),
            },
        }
    }
}

/// Mock speech segmenter answering a fixed interval list from a sidecar
/// file (`[[start, end], ...]`), ignoring the PCM payload.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSpeech {
    pub intervals: Vec<(f64, f64)>,
}

impl ScriptedSpeech {
    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let intervals: Vec<(f64, f64)> =
            serde_json::from_str(json).map_err(|e| ClientError::Script(e.to_string()))?;
        Ok(ScriptedSpeech { intervals })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl SpeechSegmenter for ScriptedSpeech {
    fn segment(&self, _: &[i16], _: u32) -> Result<Vec<(f64, f64)>, ClientError> {
        Ok(self.intervals.clone())
    }
}

/// Mock language model: answers come from a per-task map keyed by the exact
/// request text, with `"*"` as a task-wide default. A value of `"!fail"`
/// simulates a transport failure. Unmatched `correct` requests echo their
/// input (the well-behaved temperature-zero contract); other unmatched
/// tasks return an empty response.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLm {
    tasks: HashMap<String, BTreeMap<String, String>>,
}

impl ScriptedLm {
    pub fn echo() -> Self {
        ScriptedLm::default()
    }

    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let tasks: HashMap<String, BTreeMap<String, String>> =
            serde_json::from_str(json).map_err(|e| ClientError::Script(e.to_string()))?;
        for key in tasks.keys() {
            if !matches!(key.as_str(), "correct" | "extract" | "subdomain" | "crossdomain") {
                return Err(ClientError::Script(format!("unknown task section {key:?}")));
            }
        }
        Ok(ScriptedLm { tasks })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Insert one scripted answer (test convenience).
    pub fn with(mut self, task: LmTask, input: &str, output: &str) -> Self {
        self.tasks
            .entry(task.name().to_string())
            .or_default()
            .insert(input.to_string(), output.to_string());
        self
    }
}

impl LmClient for ScriptedLm {
    fn complete(&self, req: &LmRequest) -> Result<LmResponse, ClientError> {
        let section = self.tasks.get(req.task.name());
        let hit = section.and_then(|m| m.get(&req.text).or_else(|| m.get("*")));
        match hit {
            Some(v) if v == "!fail" => {
                Err(ClientError::Transport("scripted lm failure".into()))
            }
            Some(v) => Ok(LmResponse { text: v.clone() }),
            None => match req.task {
                LmTask::Correct => Ok(LmResponse { text: req.text.clone() }),
                _ => Ok(LmResponse { text: String::new() }),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct FaceRect {
    x: u32,
    y: u32,
    width: u32,
    height: u32,
}

/// Mock face detector answering fixed rectangles from a sidecar file
/// (`[{x, y, width, height}, ...]`).
#[derive(Debug, Clone, Default)]
pub struct ScriptedFaceDetector {
    pub masks: Vec<MaskRegion>,
}

impl ScriptedFaceDetector {
    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let rects: Vec<FaceRect> =
            serde_json::from_str(json).map_err(|e| ClientError::Script(e.to_string()))?;
        Ok(ScriptedFaceDetector {
            masks: rects
                .into_iter()
                .map(|r| MaskRegion {
                    rect: Rect { x: r.x, y: r.y, width: r.width, height: r.height },
                    source: MaskSource::FaceDetector,
                })
                .collect(),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl FaceDetector for ScriptedFaceDetector {
    fn detect(&self, _: &Frame) -> Result<Vec<MaskRegion>, ClientError> {
        Ok(self.masks.clone())
    }
}
