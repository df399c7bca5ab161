//! Curation pipeline for localized narratives from screen-capture
//! pedagogical videos.
//!
//! The library turns a raw frame stream plus a timestamped transcript into
//! exported narrative samples: a representative image, denoised medical/ROI
//! text, a time-aligned cursor trace, and its smallest bounding box. The
//! stages are:
//!
//! 1. [`gating`] — video-level inclusion heuristics and narrative filtering
//! 2. [`keyframe`] — key-frame detection, classification, scene chunks
//! 3. [`stability`] — stable-chunk detection (frame differencing + SSIM)
//! 4. [`trace`] — median-frame background, cursor localization, bboxes
//! 5. [`transcript`] — ASR error detection/correction and text extraction
//! 6. [`align`] — binding images, texts, and traces per scene chunk
//! 7. [`export`] — tar shard output and dataset characterization
//!
//! ML services (domain classifiers, embeddings, speech segmentation,
//! language-model correction/extraction, face detection) are behind the
//! client traits in [`clients`]; deterministic script-driven mocks ship with
//! the crate so the full pipeline runs without any model dependency.

pub mod align;
pub mod clients;
pub mod config;
pub mod export;
pub mod frame;
pub mod gating;
pub mod gaussian;
pub mod hash;
pub mod keyframe;
pub mod pipeline;
pub mod rake;
pub mod scalar;
pub mod ssim;
pub mod stability;
pub mod stopwords;
pub mod synth;
pub mod trace;
pub mod transcript;

pub use scalar::Real;

/// Scalar type used by the shipped pipeline for all floating-point scores
/// (SSIM values, cosine similarities, thresholds). The numeric kernels are
/// generic over [`Real`]; this alias pins the concrete instantiation.
pub type Score = f64;
