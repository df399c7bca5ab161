//! Key-frame detection, domain classification, and scene chunks.
//!
//! A key-frame is a frame with significant visual change from the previous
//! key-frame: the first frame always is one, and a later frame becomes one
//! when its change score (mean absolute luma difference against the previous
//! key-frame, normalized by 255) reaches the domain's scene threshold.
//! Static domains (CT, MRI, X-ray) use a fixed threshold; non-static domains
//! resolve one adaptively from the video's own consecutive-frame scores.
//!
//! Medical key-frames (per the pluggable classifier) then delimit the scene
//! chunks that drive image/text alignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ClientError, Classification, DomainClassifier};
use crate::frame::Frame;

#[derive(Error, Debug)]
pub enum KeyframeError {
    #[error("empty input stream")]
    EmptyStream,
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("failed to encode frame as PNG: {0}")]
    Png(String),
}

/// The twelve content domains the pipeline curates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Ct,
    Mri,
    Xray,
    Ultrasound,
    Mammography,
    Surgery,
    Endoscopy,
    Dentistry,
    Dermatology,
    Ophthalmology,
    Histopathology,
    GeneralMedical,
}

impl Domain {
    pub const ALL: [Domain; 12] = [
        Domain::Ct,
        Domain::Mri,
        Domain::Xray,
        Domain::Ultrasound,
        Domain::Mammography,
        Domain::Surgery,
        Domain::Endoscopy,
        Domain::Dentistry,
        Domain::Dermatology,
        Domain::Ophthalmology,
        Domain::Histopathology,
        Domain::GeneralMedical,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Ct => "ct",
            Domain::Mri => "mri",
            Domain::Xray => "xray",
            Domain::Ultrasound => "ultrasound",
            Domain::Mammography => "mammography",
            Domain::Surgery => "surgery",
            Domain::Endoscopy => "endoscopy",
            Domain::Dentistry => "dentistry",
            Domain::Dermatology => "dermatology",
            Domain::Ophthalmology => "ophthalmology",
            Domain::Histopathology => "histopathology",
            Domain::GeneralMedical => "general_medical",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace(['-', ' '], "_");
        Domain::ALL
            .iter()
            .copied()
            .find(|d| d.name() == norm)
            .or(match norm.as_str() {
                "x_ray" => Some(Domain::Xray),
                "us" => Some(Domain::Ultrasound),
                "mammo" => Some(Domain::Mammography),
                "histo" => Some(Domain::Histopathology),
                "genmed" | "general_medical_illustrations" => Some(Domain::GeneralMedical),
                _ => None,
            })
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-domain curation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub domain: Domain,
    /// Fixed key-frame threshold for static domains; non-static domains
    /// resolve an adaptive threshold and use this only as a fallback.
    pub scene_change_threshold: f64,
    /// Minimum percentage of medical key-frames for a video to qualify.
    pub medical_percent_threshold: f64,
    /// Percentage of streak candidates that must streak (static domains).
    pub narrative_streak_percent: f64,
    pub is_static: bool,
    /// Minimum contiguous speech around a key-frame (non-static domains).
    pub min_speech_seconds: f64,
}

impl DomainProfile {
    pub fn for_domain(domain: Domain) -> DomainProfile {
        let medical_percent_threshold = match domain {
            Domain::Ct | Domain::Xray => 10.0,
            Domain::Mri => 5.0,
            Domain::Dermatology | Domain::Dentistry => 30.0,
            Domain::Endoscopy | Domain::Surgery => 50.0,
            Domain::Ultrasound => 40.0,
            Domain::Ophthalmology => 35.0,
            Domain::Mammography => 25.0,
            Domain::GeneralMedical => 20.0,
            // not covered by the published table; grouped with the other
            // still-image radiology domains
            Domain::Histopathology => 10.0,
        };
        let is_static = matches!(domain, Domain::Ct | Domain::Mri | Domain::Xray);
        DomainProfile {
            domain,
            scene_change_threshold: 0.08,
            medical_percent_threshold,
            narrative_streak_percent: 30.0,
            is_static,
            min_speech_seconds: 3.0,
        }
    }
}

/// Profiles for all twelve domains.
pub fn shipped_profiles() -> Vec<DomainProfile> {
    Domain::ALL.iter().map(|&d| DomainProfile::for_domain(d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub frame_index: usize,
    pub t: f64,
    /// Mean |luma delta| vs the previous key-frame, normalized by 255.
    /// Zero for the first frame.
    pub change_score: f64,
    pub medical: Option<Classification>,
}

/// Key-frames plus their pixel data (kept for classification, embeddings,
/// de-duplication, and export).
#[derive(Debug, Clone, Default)]
pub struct DetectedKeyframes {
    pub keyframes: Vec<KeyFrame>,
    pub frames: Vec<Frame>,
}

impl DetectedKeyframes {
    pub fn medical_indices(&self) -> Vec<usize> {
        self.keyframes
            .iter()
            .enumerate()
            .filter(|(_, k)| k.medical.map(|c| c.medical).unwrap_or(false))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Mean absolute luma difference normalized by 255, in [0, 1].
pub fn change_score(a: &Frame, b: &Frame) -> Result<f64, KeyframeError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(KeyframeError::DimensionMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    let sum: u64 = a
        .luma
        .iter()
        .zip(&b.luma)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(sum as f64 / a.luma.len() as f64 / 255.0)
}

/// Scan a stream: the first frame is a key-frame, and each later frame is
/// one iff its change score against the previous key-frame reaches
/// `threshold`.
pub fn detect_keyframes_with_threshold(
    frames: impl IntoIterator<Item = Frame>,
    threshold: f64,
) -> Result<DetectedKeyframes, KeyframeError> {
    let mut detected = DetectedKeyframes::default();
    for (index, frame) in frames.into_iter().enumerate() {
        if detected.frames.is_empty() {
            detected.keyframes.push(KeyFrame {
                frame_index: index,
                t: frame.t,
                change_score: 0.0,
                medical: None,
            });
            detected.frames.push(frame);
            continue;
        }
        let score = change_score(detected.frames.last().expect("non-empty"), &frame)?;
        if score >= threshold {
            detected.keyframes.push(KeyFrame {
                frame_index: index,
                t: frame.t,
                change_score: score,
                medical: None,
            });
            detected.frames.push(frame);
        }
    }
    if detected.frames.is_empty() {
        return Err(KeyframeError::EmptyStream);
    }
    Ok(detected)
}

/// Adaptive threshold for non-static domains: mean + 2 standard deviations
/// of the consecutive-frame change scores (first pass of two).
pub fn adaptive_scene_threshold(
    frames: impl IntoIterator<Item = Frame>,
) -> Result<f64, KeyframeError> {
    let mut prev: Option<Frame> = None;
    let mut scores = Vec::new();
    for frame in frames {
        if let Some(p) = &prev {
            scores.push(change_score(p, &frame)?);
        }
        prev = Some(frame);
    }
    if prev.is_none() {
        return Err(KeyframeError::EmptyStream);
    }
    if scores.is_empty() {
        return Ok(1.0); // single frame: nothing after it can qualify
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(mean + 2.0 * var.sqrt())
}

/// Detect key-frames under a domain profile: fixed threshold for static
/// domains, adaptive two-pass otherwise.
pub fn detect_keyframes(
    frames: &[Frame],
    profile: &DomainProfile,
) -> Result<DetectedKeyframes, KeyframeError> {
    let threshold = if profile.is_static {
        profile.scene_change_threshold
    } else {
        adaptive_scene_threshold(frames.iter().cloned())?
    };
    detect_keyframes_with_threshold(frames.iter().cloned(), threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    /// Percentage of key-frames classified as medical (all key-frames in
    /// the denominator, including unclassified ones).
    pub medical_fraction: f64,
    pub classified: usize,
    pub unclassified: usize,
}

const CLASSIFY_ATTEMPTS: usize = 3;

/// Classify each key-frame through the client (PNG over the wire), with
/// retries; frames that still fail stay unclassified and are counted, not
/// fatal.
pub fn classify_keyframes(
    detected: &mut DetectedKeyframes,
    classifier: &dyn DomainClassifier,
    domain: Domain,
) -> Result<ClassifySummary, KeyframeError> {
    let mut unclassified = 0usize;
    let mut medical = 0usize;
    for (kf, frame) in detected.keyframes.iter_mut().zip(&detected.frames) {
        let png = crate::frame::encode_png(frame).map_err(|e| KeyframeError::Png(e.to_string()))?;
        let mut outcome: Result<Classification, ClientError> =
            Err(ClientError::Transport("not attempted".into()));
        for _ in 0..CLASSIFY_ATTEMPTS {
            outcome = classifier.classify(kf.frame_index, &png, domain);
            if outcome.is_ok() {
                break;
            }
        }
        match outcome {
            Ok(c) => {
                if c.medical {
                    medical += 1;
                }
                kf.medical = Some(c);
            }
            Err(_) => unclassified += 1,
        }
    }
    let total = detected.keyframes.len();
    Ok(ClassifySummary {
        medical_fraction: if total == 0 {
            0.0
        } else {
            100.0 * medical as f64 / total as f64
        },
        classified: total - unclassified,
        unclassified,
    })
}

/// A time interval delimited by consecutive medical key-frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneChunk {
    pub t_start: f64,
    pub t_end: f64,
    pub keyframes: Vec<KeyFrame>,
    pub medical: bool,
}

/// Chunk the video at medical key-frame timestamps; the last chunk runs to
/// the end of the video. No medical key-frames means no chunks.
pub fn build_scene_chunks(keyframes: &[KeyFrame], video_duration: f64) -> Vec<SceneChunk> {
    let medical: Vec<&KeyFrame> = keyframes
        .iter()
        .filter(|k| k.medical.map(|c| c.medical).unwrap_or(false))
        .collect();
    let mut chunks = Vec::new();
    for (i, kf) in medical.iter().enumerate() {
        let t_start = kf.t;
        let t_end = if i + 1 < medical.len() {
            medical[i + 1].t
        } else {
            video_duration
        };
        if t_end <= t_start {
            continue;
        }
        let members = keyframes
            .iter()
            .filter(|k| k.t >= t_start && k.t < t_end)
            .cloned()
            .collect();
        chunks.push(SceneChunk {
            t_start,
            t_end,
            keyframes: members,
            medical: true,
        });
    }
    chunks
}
