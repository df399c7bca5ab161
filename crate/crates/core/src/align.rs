//! Binding representative images, medical/ROI texts, and traces per scene
//! chunk.
//!
//! Scene chunks are padded symmetrically, keyword timelines are built from
//! the raw ASR with RAKE, and an image links to a text when a raw keyword
//! uttered near the image also appears in the text's keyword set.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, DomainClassifier, LmClient, LmRequest, LmTask};
use crate::frame::Frame;
use crate::keyframe::{change_score, Domain, SceneChunk};
use crate::rake::rake_keywords;
use crate::trace::{BBox, Trace};
use crate::transcript::{TranscriptSegment, normalize_token};

#[derive(Error, Debug)]
pub enum AlignError {
    #[error("pad_time must be non-negative, got {0}")]
    NegativePadTime(f64),
}

/// Expand every chunk by `pad_time` on both sides, clamped to the video.
/// Padded chunks may overlap.
pub fn pad_chunks(
    chunks: &[SceneChunk],
    pad_time: f64,
    duration: f64,
) -> Result<Vec<SceneChunk>, AlignError> {
    if pad_time < 0.0 {
        return Err(AlignError::NegativePadTime(pad_time));
    }
    Ok(chunks
        .iter()
        .map(|c| {
            let mut padded = c.clone();
            padded.t_start = (c.t_start - pad_time).max(0.0);
            padded.t_end = (c.t_end + pad_time).min(duration);
            padded
        })
        .collect())
}

/// A RAKE keyword with the utterance time of its first word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedKeyword {
    pub text: String,
    pub t: f64,
}

/// Normalize a keyword phrase for set membership on both sides of the
/// image/text mapping: lowercase, per-word punctuation strip, single
/// spaces. No stemming.
pub fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(|w| normalize_token(w))
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// RAKE keywords over the raw ASR, timed by the utterance of each phrase's
/// first word (falling back to the segment start).
pub fn raw_keyword_timeline(
    segments: &[TranscriptSegment],
    stoplist: &HashSet<String>,
) -> Vec<TimedKeyword> {
    let mut out = Vec::new();
    for seg in segments {
        for kw in rake_keywords(&seg.text, stoplist) {
            let first_word = kw.phrase.split(' ').next().unwrap_or_default();
            let t = seg
                .words
                .iter()
                .find(|w| normalize_token(&w.word) == first_word)
                .map(|w| w.start)
                .unwrap_or(seg.start);
            out.push(TimedKeyword { text: kw.phrase, t });
        }
    }
    out
}

/// Keywords attached to one extracted text (normalized, deduplicated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
}

impl KeywordSet {
    /// RAKE keywords of an extracted text, normalized like the raw timeline.
    pub fn for_text(text: &str, stoplist: &HashSet<String>) -> KeywordSet {
        let mut seen = HashSet::new();
        let mut keywords = Vec::new();
        for kw in rake_keywords(text, stoplist) {
            let norm = normalize_phrase(&kw.phrase);
            if !norm.is_empty() && seen.insert(norm.clone()) {
                keywords.push(norm);
            }
        }
        KeywordSet { keywords }
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.keywords.iter().any(|k| k == normalized)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignWindow {
    /// Seconds before the image during which raw keywords count.
    pub lookback: f64,
    /// Seconds after the image during which raw keywords still count.
    pub lookahead: f64,
}

impl Default for AlignWindow {
    fn default() -> Self {
        AlignWindow { lookback: 30.0, lookahead: 5.0 }
    }
}

/// Link the image at `image_t` to every text whose keyword set shares a raw
/// keyword uttered within the window. Returns indices into `texts`;
/// permuting the text list permutes, but never changes, the link set.
pub fn map_image_to_text(
    image_t: f64,
    texts: &[KeywordSet],
    raw_timeline: &[TimedKeyword],
    window: AlignWindow,
) -> Vec<usize> {
    let in_window: Vec<String> = raw_timeline
        .iter()
        .filter(|kw| kw.t >= image_t - window.lookback && kw.t <= image_t + window.lookahead)
        .map(|kw| normalize_phrase(&kw.text))
        .collect();
    texts
        .iter()
        .enumerate()
        .filter(|(_, set)| in_window.iter().any(|kw| set.contains(kw)))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepMethod {
    MedianOfStable,
    DedupedKeyframe,
}

/// A representative image for a (padded) scene chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeImage {
    pub id: String,
    pub chunk_index: usize,
    pub t: f64,
    pub frame: Frame,
    pub method: RepMethod,
}

/// Indices of frames that survive near-duplicate removal: a frame is kept
/// when its change score against every kept frame reaches `threshold`.
pub fn dedupe_keyframes(frames: &[Frame], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    'outer: for (i, frame) in frames.iter().enumerate() {
        for &k in &kept {
            if let Ok(score) = change_score(&frames[k], frame) {
                if score < threshold {
                    continue 'outer;
                }
            }
        }
        kept.push(i);
    }
    kept
}

/// One exported record binding an image to its texts, traces, and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub image_id: String,
    pub video_id: String,
    pub chunk_index: usize,
    pub chunk_start: f64,
    pub chunk_end: f64,
    pub method: RepMethod,
    pub medical_texts: Vec<String>,
    pub roi_texts: Vec<String>,
    pub traces: Vec<Trace>,
    pub bboxes: Vec<BBox>,
    pub domain: Domain,
    pub subdomains: Vec<String>,
    pub cross_domains: Vec<Domain>,
    pub width: u32,
    pub height: u32,
}

/// Subdomain labels for the video: the LM's answer intersected with the
/// configured vocabulary, in the LM's order.
pub fn classify_subdomains(
    transcript_text: &str,
    lm: &dyn LmClient,
    vocabulary: &[String],
) -> Result<Vec<String>, ClientError> {
    let resp = lm.complete(&LmRequest {
        task: LmTask::Subdomain,
        context: vocabulary.join(", "),
        text: transcript_text.to_string(),
    })?;
    let vocab: HashSet<String> = vocabulary.iter().map(|v| v.to_lowercase()).collect();
    let mut seen = HashSet::new();
    Ok(resp
        .text
        .split([',', '\n'])
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && vocab.contains(l) && seen.insert(l.clone()))
        .collect())
}

/// Cross-domain tags per image: the LM proposes modalities from the
/// transcript (unknown names ignored), then each image keeps the proposals
/// the classifier accepts when re-classified for that domain.
pub fn detect_cross_domain(
    transcript_text: &str,
    lm: &dyn LmClient,
    classifier: &dyn DomainClassifier,
    images: &[RepresentativeImage],
) -> Result<Vec<Vec<Domain>>, ClientError> {
    let resp = lm.complete(&LmRequest {
        task: LmTask::Crossdomain,
        context: String::new(),
        text: transcript_text.to_string(),
    })?;
    let mut proposed: Vec<Domain> = Vec::new();
    for label in resp.text.split([',', '\n']) {
        if let Ok(domain) = label.trim().parse::<Domain>() {
            if !proposed.contains(&domain) {
                proposed.push(domain);
            }
        }
    }
    let mut out = Vec::with_capacity(images.len());
    for (i, image) in images.iter().enumerate() {
        let png = crate::frame::encode_png(&image.frame)
            .map_err(|e| ClientError::Script(format!("png encode: {e}")))?;
        let mut tags = Vec::new();
        for &domain in &proposed {
            if let Ok(c) = classifier.classify(i, &png, domain) {
                if c.medical {
                    tags.push(domain);
                }
            }
        }
        out.push(tags);
    }
    Ok(out)
}
