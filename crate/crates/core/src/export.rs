//! Shard export and dataset characterization.
//!
//! Samples are packed into plain tar shards with one `{key}.png` and one
//! `{key}.json` per sample. Shard membership comes from ordering samples by
//! a stable 64-bit hash of their key, so the layout is reproducible
//! regardless of input order; a JSON manifest records each shard's SHA-256.
//! The JSON record schema is frozen in `schema/sample.schema.json` at the
//! repository root.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::RepMethod;
use crate::hash::fnv1a64;
use crate::keyframe::Domain;
use crate::trace::{BBox, Trace};

#[derive(Error, Debug)]
pub enum ExportError {
    #[error("shard_size must be at least 1")]
    BadShardSize,
    #[error("duplicate sample key {0:?}")]
    DuplicateKey(String),
    #[error("manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("shard listed in manifest is missing: {0}")]
    MissingShard(PathBuf),
    #[error("checksum mismatch for shard {0} (corrupt shard)")]
    ChecksumMismatch(PathBuf),
    #[error("malformed record for key {key:?}: {message}")]
    BadRecord { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest encode/decode: {0}")]
    Manifest(String),
}

/// The frozen per-sample JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub video_id: String,
    pub domain: Domain,
    pub subdomains: Vec<String>,
    pub cross_domains: Vec<Domain>,
    pub method: RepMethod,
    pub chunk_start_s: f64,
    pub chunk_end_s: f64,
    pub width: u32,
    pub height: u32,
    pub medical_texts: Vec<String>,
    pub roi_texts: Vec<String>,
    pub traces: Vec<Trace>,
    pub bboxes: Vec<BBox>,
}

/// A serialized sample: PNG image bytes plus its record.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeSample {
    pub key: String,
    pub png: Vec<u8>,
    pub record: SampleRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    pub checksum: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub shards: Vec<ShardEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn tar_header(name: &str, size: u64) -> tar::Header {
    let mut header = tar::Header::new_ustar();
    header.set_size(size);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_path(name).expect("sample keys are short");
    header.set_cksum();
    header
}

/// Write samples into tar shards under `dir` and return the manifest
/// (also written as `manifest.json`). Assignment is deterministic: samples
/// order by the FNV-1a hash of their key and fill shards of `shard_size`.
/// Any I/O failure removes the partially written shards.
pub fn write_shards(
    samples: &[NarrativeSample],
    shard_size: usize,
    dir: &Path,
) -> Result<Manifest, ExportError> {
    if shard_size == 0 {
        return Err(ExportError::BadShardSize);
    }
    std::fs::create_dir_all(dir)?;
    let mut order: Vec<&NarrativeSample> = samples.iter().collect();
    order.sort_by(|a, b| {
        fnv1a64(a.key.as_bytes())
            .cmp(&fnv1a64(b.key.as_bytes()))
            .then_with(|| a.key.cmp(&b.key))
    });
    for pair in order.windows(2) {
        if pair[0].key == pair[1].key {
            return Err(ExportError::DuplicateKey(pair[0].key.clone()));
        }
    }

    let mut created: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<Manifest, ExportError> {
        let mut manifest = Manifest::default();
        for (shard_index, group) in order.chunks(shard_size).enumerate() {
            let name = format!("shard-{shard_index:05}.tar");
            let path = dir.join(&name);
            let mut builder = tar::Builder::new(Vec::new());
            for sample in group {
                let json = serde_json::to_vec(&sample.record).map_err(|e| {
                    ExportError::BadRecord { key: sample.key.clone(), message: e.to_string() }
                })?;
                builder.append(
                    &tar_header(&format!("{}.png", sample.key), sample.png.len() as u64),
                    sample.png.as_slice(),
                )?;
                builder.append(
                    &tar_header(&format!("{}.json", sample.key), json.len() as u64),
                    json.as_slice(),
                )?;
            }
            let bytes = builder.into_inner()?;
            std::fs::write(&path, &bytes)?;
            created.push(path);
            manifest.shards.push(ShardEntry {
                path: name,
                checksum: sha256_hex(&bytes),
                count: group.len(),
            });
        }
        let manifest_json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ExportError::Manifest(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_NAME), manifest_json)?;
        Ok(manifest)
    })();
    if result.is_err() {
        for path in created {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}

/// Read every sample back from a shard directory, verifying checksums.
/// Stray tar entries (unpaired or unrecognized files) are skipped with a
/// warning string rather than failing the read.
pub fn read_shards(dir: &Path) -> Result<(Vec<NarrativeSample>, Vec<String>), ExportError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest_json = std::fs::read_to_string(&manifest_path)
        .map_err(|_| ExportError::MissingManifest(manifest_path.clone()))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_json).map_err(|e| ExportError::Manifest(e.to_string()))?;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for entry in &manifest.shards {
        let path = dir.join(&entry.path);
        let bytes = std::fs::read(&path).map_err(|_| ExportError::MissingShard(path.clone()))?;
        if sha256_hex(&bytes) != entry.checksum {
            return Err(ExportError::ChecksumMismatch(path));
        }
        let mut archive = tar::Archive::new(bytes.as_slice());
        let mut pngs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut records: BTreeMap<String, SampleRecord> = BTreeMap::new();
        for file in archive.entries()? {
            let mut file = file?;
            let name = file.path()?.to_string_lossy().into_owned();
            let mut content = Vec::new();
            file.read_to_end(&mut content)?;
            if let Some(stem) = name.strip_suffix(".png") {
                pngs.insert(stem.to_string(), content);
            } else if let Some(stem) = name.strip_suffix(".json") {
                match serde_json::from_slice::<SampleRecord>(&content) {
                    Ok(record) => {
                        records.insert(stem.to_string(), record);
                    }
                    Err(e) => warnings.push(format!(
                        "{}: skipping unparsable record {name:?}: {e}",
                        entry.path
                    )),
                }
            } else {
                warnings.push(format!("{}: skipping stray file {name:?}", entry.path));
            }
        }
        for (key, png) in pngs {
            match records.remove(&key) {
                Some(record) => samples.push(NarrativeSample { key, png, record }),
                None => warnings.push(format!(
                    "{}: skipping {key}.png without a record",
                    entry.path
                )),
            }
        }
        for key in records.keys() {
            warnings.push(format!("{}: skipping {key}.json without an image", entry.path));
        }
    }
    Ok((samples, warnings))
}

/// Per-domain characterization statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainStats {
    pub unique_images: usize,
    pub image_text_pairs: usize,
    pub avg_words_per_text: Option<f64>,
    pub avg_texts_per_image: Option<f64>,
    pub trace_count: usize,
    pub trace_point_count: usize,
    pub bbox_count: usize,
    pub avg_bbox_width: Option<f64>,
    pub avg_bbox_height: Option<f64>,
    pub avg_chunk_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetReport {
    pub domains: BTreeMap<String, DomainStats>,
    pub total: DomainStats,
}

struct StatsAccumulator {
    stats: DomainStats,
    words: usize,
    texts: usize,
    bbox_w: f64,
    bbox_h: f64,
    chunk_seconds: f64,
}

impl StatsAccumulator {
    fn new() -> Self {
        StatsAccumulator {
            stats: DomainStats::default(),
            words: 0,
            texts: 0,
            bbox_w: 0.0,
            bbox_h: 0.0,
            chunk_seconds: 0.0,
        }
    }

    fn push(&mut self, sample: &NarrativeSample) {
        let r = &sample.record;
        self.stats.unique_images += 1;
        let texts = r.medical_texts.len() + r.roi_texts.len();
        self.stats.image_text_pairs += texts;
        self.texts += texts;
        self.words += r
            .medical_texts
            .iter()
            .chain(&r.roi_texts)
            .map(|t| t.split_whitespace().count())
            .sum::<usize>();
        self.stats.trace_count += r.traces.len();
        self.stats.trace_point_count += r.traces.iter().map(|t| t.points.len()).sum::<usize>();
        self.stats.bbox_count += r.bboxes.len();
        for b in &r.bboxes {
            self.bbox_w += b.width();
            self.bbox_h += b.height();
        }
        self.chunk_seconds += r.chunk_end_s - r.chunk_start_s;
    }

    fn finish(mut self) -> DomainStats {
        let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
        self.stats.avg_words_per_text = ratio(self.words as f64, self.texts);
        self.stats.avg_texts_per_image = ratio(self.texts as f64, self.stats.unique_images);
        self.stats.avg_bbox_width = ratio(self.bbox_w, self.stats.bbox_count);
        self.stats.avg_bbox_height = ratio(self.bbox_h, self.stats.bbox_count);
        self.stats.avg_chunk_seconds = ratio(self.chunk_seconds, self.stats.unique_images);
        self.stats
    }
}

/// One-pass characterization; averages are arithmetic means.
pub fn characterize(samples: &[NarrativeSample]) -> DatasetReport {
    let mut per_domain: BTreeMap<String, StatsAccumulator> = BTreeMap::new();
    let mut total = StatsAccumulator::new();
    for sample in samples {
        per_domain
            .entry(sample.record.domain.name().to_string())
            .or_insert_with(StatsAccumulator::new)
            .push(sample);
        total.push(sample);
    }
    DatasetReport {
        domains: per_domain.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        total: total.finish(),
    }
}

/// Human-readable fixed-width table of the report.
pub fn render_table(report: &DatasetReport) -> String {
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.2}"),
        None => "-".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>10} {:>10} {:>8} {:>10} {:>8} {:>9} {:>9} {:>9}\n",
        "domain",
        "images",
        "pairs",
        "words/txt",
        "txt/image",
        "traces",
        "points",
        "bboxes",
        "bbox_w",
        "bbox_h",
        "chunk_s"
    ));
    let mut row = |name: &str, s: &DomainStats| {
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>10} {:>10} {:>8} {:>10} {:>8} {:>9} {:>9} {:>9}\n",
            name,
            s.unique_images,
            s.image_text_pairs,
            fmt_opt(s.avg_words_per_text),
            fmt_opt(s.avg_texts_per_image),
            s.trace_count,
            s.trace_point_count,
            s.bbox_count,
            fmt_opt(s.avg_bbox_width),
            fmt_opt(s.avg_bbox_height),
            fmt_opt(s.avg_chunk_seconds),
        ));
    };
    for (name, stats) in &report.domains {
        row(name, stats);
    }
    row("total", &report.total);
    out
}
