//! Video-level inclusion heuristics and narrative-style filtering.
//!
//! The gate rules: duration within one minute and two hours, speech present,
//! channel under one million subscribers, and medical key-frame fraction at
//! or above the domain threshold. Static domains additionally require
//! narrative streaks (a medical key-frame whose next three key-frames are
//! all cosine-similar at 0.9 or better); non-static domains require
//! persistent speech around medical key-frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::EmbeddingClient;
use crate::keyframe::{DetectedKeyframes, DomainProfile, KeyFrame};
use crate::scalar::Real;
use crate::transcript::{speech_intervals, TranscriptSegment};
use crate::Score;

pub const MIN_DURATION_SECONDS: f64 = 60.0;
pub const MAX_DURATION_SECONDS: f64 = 7200.0;
pub const MAX_SUBSCRIBERS: u64 = 1_000_000;
pub const STREAK_SIMILARITY_THRESHOLD: f64 = 0.9;
/// Window around a key-frame scanned for speech (seconds before, after).
pub const SPEECH_WINDOW: (f64, f64) = (5.0, 15.0);

#[derive(Error, Debug)]
pub enum GatingError {
    #[error("no streak candidates could be evaluated; narrative status undetermined")]
    NoStreakCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub duration: f64,
    pub has_speech: bool,
    pub channel_subscribers: u64,
    pub domain: crate::keyframe::Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    DurationMin,
    DurationMax,
    Speech,
    Subscribers,
    MedicalFraction,
    Narrative,
}

impl RuleId {
    pub fn name(&self) -> &'static str {
        match self {
            RuleId::DurationMin => "duration_min",
            RuleId::DurationMax => "duration_max",
            RuleId::Speech => "speech",
            RuleId::Subscribers => "subscribers",
            RuleId::MedicalFraction => "medical_fraction",
            RuleId::Narrative => "narrative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub passed: bool,
    pub failed_rules: Vec<RuleId>,
    /// Percentage of key-frames classified medical.
    pub medical_fraction: f64,
    /// Narrative determination, once assessed.
    pub narrative: Option<bool>,
    pub streak_count: usize,
}

impl GateReport {
    /// Fold the narrative assessment in; an undetermined or negative result
    /// fails the narrative rule.
    pub fn with_narrative(mut self, narrative: Option<bool>, streak_count: usize) -> GateReport {
        self.narrative = narrative;
        self.streak_count = streak_count;
        if narrative != Some(true) {
            self.failed_rules.push(RuleId::Narrative);
        }
        self.passed = self.failed_rules.is_empty();
        self
    }
}

/// The duration/speech/subscriber rules alone (cheap, metadata-only).
pub fn gate_meta_rules(meta: &VideoMeta) -> Vec<RuleId> {
    let mut failed = Vec::new();
    if meta.duration < MIN_DURATION_SECONDS {
        failed.push(RuleId::DurationMin);
    }
    if meta.duration > MAX_DURATION_SECONDS {
        failed.push(RuleId::DurationMax);
    }
    if !meta.has_speech {
        failed.push(RuleId::Speech);
    }
    if meta.channel_subscribers > MAX_SUBSCRIBERS {
        failed.push(RuleId::Subscribers);
    }
    failed
}

/// Apply every gate rule in fixed order (duration, speech, subscribers,
/// medical fraction) and report all failures, not just the first. Pure in
/// its inputs. `medical_fraction` is a percentage.
pub fn gate_video(meta: &VideoMeta, medical_fraction: f64, profile: &DomainProfile) -> GateReport {
    let mut failed = gate_meta_rules(meta);
    if medical_fraction < profile.medical_percent_threshold {
        failed.push(RuleId::MedicalFraction);
    }
    GateReport {
        passed: failed.is_empty(),
        failed_rules: failed,
        medical_fraction,
        narrative: None,
        streak_count: 0,
    }
}

/// Cosine similarity; zero-length or zero-norm input yields zero.
pub fn cosine_similarity<S: Real>(a: &[S], b: &[S]) -> S {
    if a.len() != b.len() || a.is_empty() {
        return S::zero();
    }
    let mut dot = S::zero();
    let mut na = S::zero();
    let mut nb = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// The streak rule: all three similarities at or above the threshold.
pub fn is_streak<S: Real>(sims: &[S; 3], threshold: S) -> bool {
    sims.iter().all(|&s| s >= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreakStats {
    pub streaks: usize,
    /// Candidates actually evaluated (embedding succeeded for all four
    /// frames).
    pub candidates: usize,
    /// Candidates skipped because the embedding client failed.
    pub unevaluated: usize,
}

/// Count narrative streaks over medical key-frames: for each candidate, the
/// next three key-frames must each embed at cosine similarity >= 0.9 with
/// it. Candidates without three following key-frames are skipped; at most
/// `max_candidates` are sampled, evenly spaced. Embedding failures skip the
/// candidate and count it as unevaluated.
pub fn narrative_streaks(
    detected: &DetectedKeyframes,
    embed: &dyn EmbeddingClient,
    max_candidates: usize,
) -> StreakStats {
    let kfs = &detected.keyframes;
    let eligible: Vec<usize> = detected
        .medical_indices()
        .into_iter()
        .filter(|&i| i + 3 < kfs.len())
        .collect();
    let sampled: Vec<usize> = if max_candidates > 0 && eligible.len() > max_candidates {
        let stride = eligible.len().div_ceil(max_candidates);
        eligible.iter().copied().step_by(stride).collect()
    } else {
        eligible
    };
    let mut cache: std::collections::HashMap<usize, Option<Vec<f64>>> =
        std::collections::HashMap::new();
    let mut embed_of = |i: usize, detected: &DetectedKeyframes| -> Option<Vec<f64>> {
        cache
            .entry(i)
            .or_insert_with(|| {
                embed
                    .embed(detected.keyframes[i].frame_index, &detected.frames[i])
                    .ok()
            })
            .clone()
    };
    let mut stats = StreakStats { streaks: 0, candidates: 0, unevaluated: 0 };
    for &i in &sampled {
        let anchor = match embed_of(i, detected) {
            Some(v) => v,
            None => {
                stats.unevaluated += 1;
                continue;
            }
        };
        let mut sims = [0.0 as Score; 3];
        let mut ok = true;
        for (k, sim) in sims.iter_mut().enumerate() {
            match embed_of(i + 1 + k, detected) {
                Some(v) => *sim = cosine_similarity(&anchor, &v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            stats.unevaluated += 1;
            continue;
        }
        stats.candidates += 1;
        if is_streak(&sims, STREAK_SIMILARITY_THRESHOLD) {
            stats.streaks += 1;
        }
    }
    stats
}

/// Static-domain narrative decision: the streak percentage must reach the
/// profile's threshold (inclusive). Zero evaluated candidates leaves the
/// status undetermined and the video is rejected.
pub fn is_narrative(
    streak_count: usize,
    candidates: usize,
    profile: &DomainProfile,
) -> Result<bool, GatingError> {
    if candidates == 0 {
        return Err(GatingError::NoStreakCandidates);
    }
    Ok(100.0 * streak_count as f64 / candidates as f64 >= profile.narrative_streak_percent)
}

/// Non-static narrative decision: strictly more than half of the medical
/// key-frames must have contiguous speech of at least
/// `profile.min_speech_seconds` within `[t - window.0, t + window.1]`.
pub fn is_narrative_nonstatic(
    keyframes: &[KeyFrame],
    transcript: &[TranscriptSegment],
    profile: &DomainProfile,
    window: (f64, f64),
) -> bool {
    let speech = speech_intervals(transcript);
    let medical: Vec<&KeyFrame> = keyframes
        .iter()
        .filter(|k| k.medical.map(|c| c.medical).unwrap_or(false))
        .collect();
    if medical.is_empty() {
        return false;
    }
    let with_speech = medical
        .iter()
        .filter(|kf| {
            let (w0, w1) = (kf.t - window.0, kf.t + window.1);
            let longest = speech
                .iter()
                .map(|&(s, e)| (e.min(w1) - s.max(w0)).max(0.0))
                .fold(0.0, f64::max);
            longest >= profile.min_speech_seconds
        })
        .count();
    2 * with_speech > medical.len()
}
