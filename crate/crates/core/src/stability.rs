//! Stable-chunk detection: frame differencing with Gaussian-filtered
//! adaptive thresholding, verified by SSIM on randomly sampled patches.
//!
//! The differencing pass alone misreads homogeneous content (a small real
//! change in a flat background still averages out), so every candidate run
//! of stable frame pairs is re-checked by comparing patches of its first and
//! last frames; rejected candidates are split at their strongest internal
//! difference and re-evaluated down to the minimum chunk duration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FormatError, Frame};
use crate::gaussian::gaussian_blur_q8;
use crate::hash::splitmix64;
use crate::ssim::ssim;
use crate::Score;

#[derive(Error, Debug)]
pub enum StabilityError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("empty input stream")]
    EmptyStream,
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Gaussian sigma in pixels for smoothing the difference image.
    pub sigma: f64,
    /// Threshold multiplier over the smoothed-image global mean.
    pub k: f64,
    /// Lower clamp for the adaptive threshold, in luma units.
    pub noise_floor: f64,
    /// Upper clamp for the adaptive threshold; keeps frame-wide changes from
    /// raising the threshold past their own magnitude.
    pub threshold_cap: f64,
    /// A pair is stable while the fraction of smoothed pixels above the
    /// threshold stays below this.
    pub change_pixel_fraction: f64,
    pub min_stable_seconds: f64,
    pub n_patches: usize,
    pub patch_side: usize,
    pub ssim_min: f64,
    /// Disable to emit unverified chunks straight from differencing.
    pub ssim_verify: bool,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            sigma: 3.0,
            k: 3.0,
            noise_floor: 12.0,
            threshold_cap: 16.0,
            change_pixel_fraction: 0.002,
            min_stable_seconds: 2.0,
            n_patches: 16,
            patch_side: 32,
            ssim_min: 0.9,
            ssim_verify: true,
            seed: 0,
        }
    }
}

/// Per-pixel absolute difference of two equally sized frames.
#[derive(Debug, Clone)]
pub struct DiffImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

pub fn frame_diff(a: &Frame, b: &Frame) -> Result<DiffImage, StabilityError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(StabilityError::DimensionMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    let pixels = a
        .luma
        .iter()
        .zip(&b.luma)
        .map(|(&x, &y)| x.abs_diff(y))
        .collect();
    Ok(DiffImage {
        width: a.width,
        height: a.height,
        pixels,
    })
}

/// Outcome of the adaptive stability test on one frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffDecision {
    /// Indices of the compared frames.
    pub first: usize,
    pub second: usize,
    /// Mean absolute luma difference before smoothing.
    pub raw_diff: f64,
    /// Mean of the Gaussian-smoothed difference image.
    pub smoothed_diff: f64,
    pub threshold_used: f64,
    pub stable: bool,
}

/// Gaussian-smooth the difference image and threshold it adaptively:
/// `threshold = clamp(k * mean(smoothed), noise_floor, threshold_cap)`;
/// the pair is stable while the fraction of smoothed pixels above the
/// threshold stays below `change_pixel_fraction`.
pub fn adaptive_stability(
    pair: (usize, usize),
    diff: &DiffImage,
    cfg: &StabilityConfig,
) -> DiffDecision {
    let n = diff.pixels.len();
    let sum: u64 = diff.pixels.iter().map(|&v| v as u64).sum();
    let raw_mean = sum as f64 / n as f64;
    let raw_max = diff.pixels.iter().copied().max().unwrap_or(0);

    // Smoothing never raises the maximum, so a pair whose raw peak sits
    // under the threshold floor cannot have any exceeding pixel.
    if (raw_max as f64) < cfg.noise_floor {
        let threshold = (cfg.k * raw_mean).clamp(cfg.noise_floor, cfg.threshold_cap);
        return DiffDecision {
            first: pair.0,
            second: pair.1,
            raw_diff: raw_mean,
            smoothed_diff: raw_mean,
            threshold_used: threshold,
            stable: true,
        };
    }

    let smoothed = gaussian_blur_q8(
        &diff.pixels,
        diff.width as usize,
        diff.height as usize,
        cfg.sigma,
    );
    let mean = smoothed.mean();
    let threshold = (cfg.k * mean).clamp(cfg.noise_floor, cfg.threshold_cap);
    let above = smoothed.count_above(threshold);
    let fraction = above as f64 / n as f64;
    DiffDecision {
        first: pair.0,
        second: pair.1,
        raw_diff: raw_mean,
        smoothed_diff: mean,
        threshold_used: threshold,
        stable: fraction < cfg.change_pixel_fraction,
    }
}

/// An interval where the background held still.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableChunk {
    pub t_start: f64,
    pub t_end: f64,
    /// Inclusive frame index range.
    pub frame_start: usize,
    pub frame_end: usize,
    pub verified: bool,
}

impl StableChunk {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Patch-SSIM verification of a chunk candidate: sample `n_patches` seeded
/// positions from the first and last frames; verified when every patch pair
/// scores at least `ssim_min`.
pub fn verify_chunk(
    first: &Frame,
    last: &Frame,
    frame_range: (usize, usize),
    cfg: &StabilityConfig,
) -> bool {
    let w = first.width as usize;
    let h = first.height as usize;
    let side = cfg.patch_side.min(w).min(h);
    if side < 8 || cfg.n_patches == 0 {
        return true; // nothing verifiable at this size
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
        cfg.seed ^ splitmix64(frame_range.0 as u64) ^ frame_range.1 as u64,
    ));
    let mut pa = vec![0u8; side * side];
    let mut pb = vec![0u8; side * side];
    for _ in 0..cfg.n_patches {
        let x = rng.random_range(0..=w - side);
        let y = rng.random_range(0..=h - side);
        for row in 0..side {
            let src = (y + row) * w + x;
            pa[row * side..(row + 1) * side].copy_from_slice(&first.luma[src..src + side]);
            pb[row * side..(row + 1) * side].copy_from_slice(&last.luma[src..src + side]);
        }
        let score: Score = ssim(&pa, &pb).expect("patch dimensions validated");
        if score < cfg.ssim_min {
            return false;
        }
    }
    true
}

/// Maximal runs of consecutive stable decisions, as inclusive frame ranges
/// spanning at least two frames.
pub fn stable_runs(decisions: &[DiffDecision]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for d in decisions {
        if d.stable {
            if start.is_none() {
                start = Some(d.first);
            }
        } else if let Some(s) = start.take() {
            runs.push((s, d.first));
        }
    }
    if let (Some(s), Some(last)) = (start, decisions.last()) {
        runs.push((s, last.second));
    }
    runs
}

/// Resolve candidate runs into verified chunks, splitting rejected candidates
/// at their max-difference pair. `fetch_pair` supplies the first/last frames
/// of a candidate (by index) so callers can stream from disk.
pub fn resolve_chunks<E, F>(
    decisions: &[DiffDecision],
    times: &[f64],
    cfg: &StabilityConfig,
    mut fetch_pair: F,
) -> Result<Vec<StableChunk>, E>
where
    F: FnMut(usize, usize) -> Result<(Frame, Frame), E>,
{
    let mut chunks = Vec::new();
    let mut stack: Vec<(usize, usize)> = stable_runs(decisions);
    while let Some((s, e)) = stack.pop() {
        if e <= s {
            continue;
        }
        if times[e] - times[s] < cfg.min_stable_seconds {
            continue;
        }
        let verified = if cfg.ssim_verify {
            let (first, last) = fetch_pair(s, e)?;
            verify_chunk(&first, &last, (s, e), cfg)
        } else {
            false
        };
        if verified || !cfg.ssim_verify {
            chunks.push(StableChunk {
                t_start: times[s],
                t_end: times[e],
                frame_start: s,
                frame_end: e,
                verified,
            });
            continue;
        }
        // Split at the strongest internal difference and retry both halves.
        let split = decisions[s..e]
            .iter()
            .max_by(|a, b| a.smoothed_diff.total_cmp(&b.smoothed_diff))
            .map(|d| d.first)
            .unwrap_or(s);
        if split > s {
            stack.push((s, split));
        }
        if split + 1 < e {
            stack.push((split + 1, e));
        }
    }
    chunks.sort_by_key(|c| c.frame_start);
    Ok(chunks)
}

/// Pairwise decisions over an in-memory frame slice.
pub fn diff_decisions(
    frames: &[Frame],
    cfg: &StabilityConfig,
) -> Result<Vec<DiffDecision>, StabilityError> {
    let mut decisions = Vec::with_capacity(frames.len().saturating_sub(1));
    for (i, pair) in frames.windows(2).enumerate() {
        let diff = frame_diff(&pair[0], &pair[1])?;
        decisions.push(adaptive_stability((i, i + 1), &diff, cfg));
    }
    Ok(decisions)
}

/// Full detection over an in-memory video: maximal stable runs, SSIM
/// verification, minimum-duration filtering. A fully dynamic video yields an
/// empty list. Deterministic for a fixed config.
pub fn detect_stable_chunks(
    frames: &[Frame],
    cfg: &StabilityConfig,
) -> Result<Vec<StableChunk>, StabilityError> {
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let decisions = diff_decisions(frames, cfg)?;
    let times: Vec<f64> = frames.iter().map(|f| f.t).collect();
    resolve_chunks(&decisions, &times, cfg, |s, e| {
        Ok::<_, StabilityError>((frames[s].clone(), frames[e].clone()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SyntheticSpec, Waypoint};

    fn flat_frame(t: f64, w: u32, h: u32, value: u8) -> Frame {
        Frame::new(t, w, h, vec![value; (w * h) as usize])
    }

    #[test]
    fn diff_of_identical_frames_is_zero() {
        let a = flat_frame(0.0, 8, 8, 7);
        let d = frame_diff(&a, &a).unwrap();
        assert!(d.pixels.iter().all(|&v| v == 0));
    }

    #[test]
    fn diff_of_extremes_is_255() {
        let a = flat_frame(0.0, 8, 8, 0);
        let b = flat_frame(0.1, 8, 8, 255);
        let d = frame_diff(&a, &b).unwrap();
        assert!(d.pixels.iter().all(|&v| v == 255));
    }

    #[test]
    fn diff_matches_elementwise_oracle() {
        let w = 16;
        let h = 12;
        let a_px: Vec<u8> = (0..w * h)
            .map(|i| (crate::hash::splitmix64(i as u64) % 256) as u8)
            .collect();
        let b_px: Vec<u8> = (0..w * h)
            .map(|i| (crate::hash::splitmix64(i as u64 + 999) % 256) as u8)
            .collect();
        let a = Frame::new(0.0, w as u32, h as u32, a_px.clone());
        let b = Frame::new(0.1, w as u32, h as u32, b_px.clone());
        let d = frame_diff(&a, &b).unwrap();
        for i in 0..w * h {
            let expected = (a_px[i] as i16 - b_px[i] as i16).unsigned_abs() as u8;
            assert_eq!(d.pixels[i], expected);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = flat_frame(0.0, 8, 8, 0);
        let b = flat_frame(0.1, 8, 9, 0);
        assert!(matches!(
            frame_diff(&a, &b),
            Err(StabilityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_diff_is_stable_for_any_k() {
        let diff = DiffImage {
            width: 64,
            height: 64,
            pixels: vec![0; 64 * 64],
        };
        for k in [0.5, 1.0, 3.0, 10.0] {
            let cfg = StabilityConfig { k, ..Default::default() };
            assert!(adaptive_stability((0, 1), &diff, &cfg).stable);
        }
    }

    #[test]
    fn single_hot_pixel_is_noise_rejected() {
        // One saturated pixel, sigma 2: the smoothed peak (about 10 luma)
        // stays under the default threshold floor.
        let mut pixels = vec![0u8; 64 * 64];
        pixels[32 * 64 + 32] = 255;
        let diff = DiffImage { width: 64, height: 64, pixels };
        let cfg = StabilityConfig { sigma: 2.0, ..Default::default() };
        let d = adaptive_stability((0, 1), &diff, &cfg);
        assert!(d.stable);
        assert!(d.threshold_used >= 12.0);
    }

    #[test]
    fn half_frame_shift_is_unstable() {
        let (w, h) = (64usize, 64usize);
        let mut pixels = vec![0u8; w * h];
        for p in pixels.iter_mut().take(w * h / 2) {
            *p = 80;
        }
        let diff = DiffImage { width: 64, height: 64, pixels };
        let d = adaptive_stability((0, 1), &diff, &StabilityConfig::default());
        assert!(!d.stable);
        // the exceeding fraction is the shifted half, far above the limit
        assert!(d.threshold_used < 80.0);
    }

    fn static_spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            width: 96,
            height: 96,
            fps_num: 10,
            fps_den: 1,
            duration: 8.0,
            background_seed: 11,
            cursor_path: vec![
                Waypoint { t: 0.0, x: 20.0, y: 20.0 },
                Waypoint { t: 8.0, x: 70.0, y: 60.0 },
            ],
            motion_segments: vec![],
            motion_speed: 40.0,
            noise_sigma: noise,
            blob_delta: 60,
            blob_size: 5,
            distractors: vec![],
        }
    }

    #[test]
    fn all_static_video_is_one_full_chunk() {
        let (frames, _) = generate_synthetic(&static_spec(0.0), 5).unwrap();
        let chunks = detect_stable_chunks(&frames, &StabilityConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1, "chunks: {chunks:?}");
        assert_eq!(chunks[0].frame_start, 0);
        assert_eq!(chunks[0].frame_end, frames.len() - 1);
        assert!(chunks[0].verified);
    }

    #[test]
    fn cursor_motion_does_not_break_stability() {
        let (frames, _) = generate_synthetic(&static_spec(3.0), 5).unwrap();
        let chunks = detect_stable_chunks(&frames, &StabilityConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].verified);
    }

    #[test]
    fn strobe_video_yields_no_chunks() {
        let frames: Vec<Frame> = (0..40)
            .map(|i| flat_frame(i as f64 / 10.0, 32, 32, if i % 2 == 0 { 0 } else { 255 }))
            .collect();
        let chunks = detect_stable_chunks(&frames, &StabilityConfig::default()).unwrap();
        assert!(chunks.is_empty());
    }

    #[test]
    fn pan_splits_video_into_two_chunks() {
        let mut spec = static_spec(0.0);
        spec.duration = 20.0;
        spec.motion_segments = vec![(8.0, 10.0)];
        spec.cursor_path = vec![
            Waypoint { t: 0.0, x: 20.0, y: 20.0 },
            Waypoint { t: 20.0, x: 70.0, y: 60.0 },
        ];
        let (frames, gt) = generate_synthetic(&spec, 5).unwrap();
        let chunks = detect_stable_chunks(&frames, &StabilityConfig::default()).unwrap();
        assert_eq!(chunks.len(), 2, "chunks: {chunks:?}");
        for (chunk, (gs, ge)) in chunks.iter().zip(&gt.static_intervals) {
            let inter = (chunk.t_end.min(*ge) - chunk.t_start.max(*gs)).max(0.0);
            let union = chunk.t_end.max(*ge) - chunk.t_start.min(*gs);
            assert!(inter / union >= 0.9, "IoU too low vs ({gs}, {ge}): {chunk:?}");
        }
    }

    #[test]
    fn homogeneity_false_positive_caught_by_ssim_verify() {
        // Flat background with a small region change between the endpoints:
        // differencing alone calls the pair-wise steps stable, the patch
        // check must reject.
        let w = 64u32;
        let h = 64u32;
        let mut frames: Vec<Frame> = (0..40)
            .map(|i| flat_frame(i as f64 / 10.0, w, h, 100))
            .collect();
        // region drifts in slowly: each pair changes by 2 luma, below floor
        for (i, frame) in frames.iter_mut().enumerate() {
            let lift = (i as i32 * 2).min(60) as u8;
            for y in 20..36 {
                for x in 20..36 {
                    frame.luma[y * w as usize + x] = 100 + lift;
                }
            }
        }
        let cfg = StabilityConfig::default();
        let decisions = diff_decisions(&frames, &cfg).unwrap();
        assert!(decisions.iter().all(|d| d.stable), "diff-only must miss this");
        let chunks = detect_stable_chunks(&frames, &cfg).unwrap();
        for c in &chunks {
            let drift_start = c.frame_start as i32 * 2;
            let drift_end = (c.frame_end as i32 * 2).min(60);
            assert!(
                drift_end - drift_start < 30,
                "no verified chunk may span the drift: {c:?}"
            );
        }
    }

    #[test]
    fn chunks_are_disjoint_sorted_and_deterministic() {
        let mut spec = static_spec(8.0);
        spec.duration = 12.0;
        spec.motion_segments = vec![(5.0, 6.0)];
        let (frames, _) = generate_synthetic(&spec, 2).unwrap();
        let cfg = StabilityConfig::default();
        let a = detect_stable_chunks(&frames, &cfg).unwrap();
        let b = detect_stable_chunks(&frames, &cfg).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[0].frame_end < w[1].frame_start);
            assert!(w[0].t_end <= w[1].t_start);
        }
        for c in &a {
            assert!(c.duration() >= cfg.min_stable_seconds);
            assert!(verify_chunk(
                &frames[c.frame_start],
                &frames[c.frame_end],
                (c.frame_start, c.frame_end),
                &cfg
            ));
        }
    }
}
