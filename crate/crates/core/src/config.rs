//! Run configuration: one TOML tree covering every stage tunable, with
//! `NARR_*` environment overrides. Unknown keys are rejected, and every run
//! writes the fully resolved configuration next to its artifacts.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyframe::Domain;
use crate::stability::StabilityConfig;
use crate::trace::TraceConfig;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid override {key}: {message}")]
    Override { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeConfig {
    /// Overrides the domain profile's scene threshold when set.
    pub scene_change_threshold: Option<f64>,
    /// Number of streak candidates sampled per video.
    pub streak_candidates: usize,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        KeyframeConfig { scene_change_threshold: None, streak_candidates: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingConfig {
    /// Speech window around a key-frame, seconds before and after.
    pub speech_window_before: f64,
    pub speech_window_after: f64,
    /// Override the profile's narrative streak percentage when set.
    pub narrative_streak_percent: Option<f64>,
    /// Override the profile's minimum speech seconds when set.
    pub min_speech_seconds: Option<f64>,
}

impl Default for GatingConfig {
    fn default() -> Self {
        GatingConfig {
            speech_window_before: 5.0,
            speech_window_after: 15.0,
            narrative_streak_percent: None,
            min_speech_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranscriptTuning {
    /// Medical lexicon file (UMLS stand-in); required when transcripts are
    /// processed.
    pub lexicon: Option<PathBuf>,
    /// Bigrams below this lexicon frequency flag their second word.
    pub ngram_cutoff: u64,
    /// Deictic cue words that license ROI text.
    pub deictic: Vec<String>,
    /// Subdomain label vocabulary the LM's answers are intersected with.
    pub subdomain_vocabulary: Vec<String>,
}

impl Default for TranscriptTuning {
    fn default() -> Self {
        TranscriptTuning {
            lexicon: None,
            ngram_cutoff: 2,
            deictic: crate::transcript::DEFAULT_DEICTIC
                .iter()
                .map(|s| s.to_string())
                .collect(),
            subdomain_vocabulary: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Symmetric scene-chunk padding in seconds.
    pub pad_time: f64,
    /// Raw-keyword window around an image, seconds before / after.
    pub lookback: f64,
    pub lookahead: f64,
    /// Key-frames closer than this change score are de-duplicated.
    pub dedupe_threshold: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { pad_time: 3.0, lookback: 30.0, lookahead: 5.0, dedupe_threshold: 0.08 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportTuning {
    pub shard_size: usize,
}

impl Default for ExportTuning {
    fn default() -> Self {
        ExportTuning { shard_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub domain: Domain,
    /// Master seed: feeds patch sampling and any other seeded choice.
    pub seed: u64,
    /// Corpus manifest (JSON listing the video jobs).
    pub corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub keyframe: KeyframeConfig,
    pub gating: GatingConfig,
    pub stability: StabilityConfig,
    pub trace: TraceConfig,
    pub transcript: TranscriptTuning,
    pub align: AlignConfig,
    pub export: ExportTuning,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: Domain::Ct,
            seed: 0,
            corpus: None,
            output_dir: PathBuf::from("out"),
            workers: 1,
            keyframe: KeyframeConfig::default(),
            gating: GatingConfig::default(),
            stability: StabilityConfig::default(),
            trace: TraceConfig::default(),
            transcript: TranscriptTuning::default(),
            align: AlignConfig::default(),
            export: ExportTuning::default(),
        }
    }
}

pub const ENV_PREFIX: &str = "NARR_";

const SECTIONS: &[&str] = &[
    "keyframe",
    "gating",
    "stability",
    "trace",
    "transcript",
    "align",
    "export",
];

impl RunConfig {
    pub fn from_toml(toml_text: &str) -> Result<RunConfig, ConfigError> {
        Self::from_toml_with_env(toml_text, std::env::vars())
    }

    /// Parse the TOML tree, apply `NARR_*` overrides, then deserialize
    /// (unknown keys rejected).
    pub fn from_toml_with_env(
        toml_text: &str,
        env: impl Iterator<Item = (String, String)>,
    ) -> Result<RunConfig, ConfigError> {
        let mut table: toml::Table = toml_text
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("toml parse: {e}")))?;
        apply_env_overrides(&mut table, env)?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Map `NARR_SECTION_FIELD=value` to `section.field` (sections have no
/// underscores, so everything after the first one is the field name);
/// other `NARR_KEY` variables override top-level keys. Values parse as
/// bool, then integer, then float, then plain string.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    env: impl Iterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    let mut overrides: Vec<(String, String)> = env
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let rest = key[ENV_PREFIX.len()..].to_lowercase();
        if rest.is_empty() {
            continue;
        }
        let (section, field) = match rest.split_once('_') {
            Some((head, tail)) if SECTIONS.contains(&head) && !tail.is_empty() => {
                (Some(head.to_string()), tail.to_string())
            }
            _ => (None, rest.clone()),
        };
        let parsed = parse_env_value(&raw);
        match section {
            Some(section) => {
                let entry = table
                    .entry(section.clone())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                let sub = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
                    key: key.clone(),
                    message: format!("config key {section:?} is not a table"),
                })?;
                sub.insert(field, parsed);
            }
            None => {
                table.insert(field, parsed);
            }
        }
    }
    Ok(())
}

fn parse_env_value(raw: &str) -> toml::Value {
    if raw.eq_ignore_ascii_case("true") {
        return toml::Value::Boolean(true);
    }
    if raw.eq_ignore_ascii_case("false") {
        return toml::Value::Boolean(false);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}
