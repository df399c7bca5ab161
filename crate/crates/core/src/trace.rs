//! Cursor-trace extraction within stable chunks.
//!
//! The background of a stable chunk is modeled as the per-pixel median frame;
//! subtracting it isolates the cursor, whose location per frame is the
//! maximum residual pixel above a noise threshold. Face-like distraction
//! regions are masked out before localization. The smallest axis-aligned box
//! around a trace's points is its bounding box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, Rect};
use crate::stability::StableChunk;

#[derive(Error, Debug)]
pub enum TraceError {
    #[error("empty chunk: median frame undefined")]
    EmptyChunk,
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("empty trace has no bounding box")]
    EmptyTrace,
    #[error("mask region {rect:?} exceeds the {width}x{height} frame")]
    MaskOutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("chunk frame range {0}..={1} exceeds the available {2} frames")]
    ChunkOutOfRange(usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Minimum residual (luma units) for a pixel to count as the cursor.
    pub noise_threshold: u8,
    /// Traces with fewer surviving points are dropped.
    pub min_trace_points: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            noise_threshold: 25,
            min_trace_points: 5,
        }
    }
}

/// One cursor observation. Within a [`Trace`], `t` is measured from the
/// chunk start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Peak residual value at the point, in luma units.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub chunk_id: usize,
    pub points: Vec<TracePoint>,
    /// Representative image this trace was aligned to, once known.
    pub image_ref: Option<String>,
}

/// Smallest axis-aligned rectangle around a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    FaceDetector,
    Manual,
}

/// A rectangle excluded from cursor localization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub rect: Rect,
    pub source: MaskSource,
}

/// Per-pixel median plane over `n` frames, streamed row by row through
/// `fetch_row(frame_index, row, buf)`. Even counts take the lower median.
pub fn median_plane<E>(
    n: usize,
    width: usize,
    height: usize,
    mut fetch_row: impl FnMut(usize, usize, &mut [u8]) -> Result<(), E>,
) -> Result<Vec<u8>, E> {
    assert!(n > 0, "median of zero frames");
    let rank = (n - 1) / 2; // lower median
    let mut vals = vec![0u8; n * width];
    let mut row_buf = vec![0u8; width];
    let mut out = vec![0u8; width * height];
    for y in 0..height {
        for j in 0..n {
            fetch_row(j, y, &mut row_buf)?;
            for (x, &v) in row_buf.iter().enumerate() {
                vals[x * n + j] = v;
            }
        }
        for x in 0..width {
            let slice = &mut vals[x * n..(x + 1) * n];
            let (_, m, _) = slice.select_nth_unstable(rank);
            out[y * width + x] = *m;
        }
    }
    Ok(out)
}

/// Per-pixel median of the chunk's frames (lower median for even counts).
/// Color planes are carried through when every frame has them.
pub fn median_frame(frames: &[Frame]) -> Result<Frame, TraceError> {
    let first = frames.first().ok_or(TraceError::EmptyChunk)?;
    let (w, h) = (first.width, first.height);
    for f in frames {
        if (f.width, f.height) != (w, h) {
            return Err(TraceError::DimensionMismatch {
                a: (w, h),
                b: (f.width, f.height),
            });
        }
    }
    let (wu, hu) = (w as usize, h as usize);
    let luma = median_plane::<TraceError>(frames.len(), wu, hu, |j, y, buf| {
        buf.copy_from_slice(&frames[j].luma[y * wu..(y + 1) * wu]);
        Ok(())
    })?;
    let color = if frames.iter().all(|f| f.color.is_some()) {
        let mut planes = Vec::with_capacity(3 * wu * hu);
        for p in 0..3 {
            let base = p * wu * hu;
            let plane = median_plane::<TraceError>(frames.len(), wu, hu, |j, y, buf| {
                let src = frames[j].color.as_ref().expect("checked above");
                buf.copy_from_slice(&src[base + y * wu..base + (y + 1) * wu]);
                Ok(())
            })?;
            planes.extend_from_slice(&plane);
        }
        Some(planes)
    } else {
        None
    };
    Ok(Frame {
        t: first.t,
        width: w,
        height: h,
        luma,
        color,
    })
}

fn validate_masks(masks: &[MaskRegion], width: u32, height: u32) -> Result<(), TraceError> {
    for m in masks {
        if !m.rect.within_frame(width, height) {
            return Err(TraceError::MaskOutOfBounds {
                rect: m.rect,
                width,
                height,
            });
        }
    }
    Ok(())
}

/// Locate the cursor in one frame: the arg-max of `|frame - background|`
/// with masked pixels excluded. Returns `None` when the peak residual stays
/// under `noise_threshold` (cursor absent or resting on the background).
/// Ties break to the smallest row-major index. The returned `t` is the
/// frame's own timestamp.
pub fn locate_cursor(
    frame: &Frame,
    background: &Frame,
    masks: &[MaskRegion],
    noise_threshold: u8,
) -> Result<Option<TracePoint>, TraceError> {
    if (frame.width, frame.height) != (background.width, background.height) {
        return Err(TraceError::DimensionMismatch {
            a: (frame.width, frame.height),
            b: (background.width, background.height),
        });
    }
    validate_masks(masks, frame.width, frame.height)?;
    let w = frame.width as usize;
    let mut best: u8 = 0;
    let mut best_idx: Option<usize> = None;
    for (i, (&a, &b)) in frame.luma.iter().zip(&background.luma).enumerate() {
        let r = a.abs_diff(b);
        if r > best {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            if masks.iter().any(|m| m.rect.contains(x, y)) {
                continue;
            }
            best = r;
            best_idx = Some(i);
        }
    }
    if best < noise_threshold {
        return Ok(None);
    }
    let idx = best_idx.expect("best >= threshold > 0 implies an index");
    Ok(Some(TracePoint {
        t: frame.t,
        x: (idx % w) as f64,
        y: (idx / w) as f64,
        confidence: best as f64,
    }))
}

/// Extract the trace of one stable chunk from the full frame slice: median
/// background, one localization per frame, absent points omitted. Emits
/// nothing when fewer than `min_trace_points` survive. Point times are
/// relative to the chunk start.
pub fn extract_trace(
    chunk_id: usize,
    chunk: &StableChunk,
    frames: &[Frame],
    masks: &[MaskRegion],
    cfg: &TraceConfig,
) -> Result<Option<Trace>, TraceError> {
    if chunk.frame_end >= frames.len() || chunk.frame_start > chunk.frame_end {
        return Err(TraceError::ChunkOutOfRange(
            chunk.frame_start,
            chunk.frame_end,
            frames.len(),
        ));
    }
    let span = &frames[chunk.frame_start..=chunk.frame_end];
    let background = median_frame(span)?;
    let mut points = Vec::new();
    for frame in span {
        if let Some(mut p) = locate_cursor(frame, &background, masks, cfg.noise_threshold)? {
            p.t = frame.t - chunk.t_start;
            points.push(p);
        }
    }
    if points.len() < cfg.min_trace_points {
        return Ok(None);
    }
    Ok(Some(Trace {
        chunk_id,
        points,
        image_ref: None,
    }))
}

/// Componentwise min/max of the trace points.
pub fn trace_to_bbox(trace: &Trace) -> Result<BBox, TraceError> {
    if trace.points.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut bbox = BBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for p in &trace.points {
        bbox.x_min = bbox.x_min.min(p.x);
        bbox.y_min = bbox.y_min.min(p.y);
        bbox.x_max = bbox.x_max.max(p.x);
        bbox.y_max = bbox.y_max.max(p.y);
    }
    Ok(bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::{detect_stable_chunks, StabilityConfig};
    use crate::synth::{generate_synthetic, SyntheticSpec, Waypoint};

    fn frame_with(t: f64, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> Frame {
        let mut luma = vec![0u8; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                luma[(y * w + x) as usize] = f(x, y);
            }
        }
        Frame::new(t, w, h, luma)
    }

    #[test]
    fn median_of_identical_frames_is_that_frame() {
        let f = frame_with(0.0, 9, 7, |x, y| (x * 13 + y * 31) as u8);
        let frames = vec![f.clone(), f.clone(), f.clone()];
        assert_eq!(median_frame(&frames).unwrap().luma, f.luma);
    }

    #[test]
    fn median_of_three_values_takes_the_middle() {
        let frames = vec![
            frame_with(0.0, 4, 4, |_, _| 10),
            frame_with(0.1, 4, 4, |_, _| 200),
            frame_with(0.2, 4, 4, |_, _| 20),
        ];
        assert!(median_frame(&frames).unwrap().luma.iter().all(|&v| v == 20));
    }

    #[test]
    fn even_count_takes_lower_median() {
        let frames = vec![
            frame_with(0.0, 4, 4, |_, _| 10),
            frame_with(0.1, 4, 4, |_, _| 20),
        ];
        assert!(median_frame(&frames).unwrap().luma.iter().all(|&v| v == 10));
    }

    #[test]
    fn median_matches_per_pixel_sort_oracle() {
        let n = 9usize;
        let frames: Vec<Frame> = (0..n)
            .map(|j| {
                frame_with(j as f64, 16, 12, |x, y| {
                    (crate::hash::splitmix64(j as u64 * 1000 + y as u64 * 16 + x as u64) % 256)
                        as u8
                })
            })
            .collect();
        let median = median_frame(&frames).unwrap();
        for i in 0..16 * 12 {
            let mut col: Vec<u8> = frames.iter().map(|f| f.luma[i]).collect();
            col.sort_unstable();
            assert_eq!(median.luma[i], col[(n - 1) / 2], "pixel {i}");
        }
    }

    #[test]
    fn duplicating_all_frames_keeps_the_median_on_odd_counts() {
        let frames: Vec<Frame> = (0..5)
            .map(|j| {
                frame_with(j as f64, 8, 8, |x, y| {
                    (crate::hash::splitmix64((j * 77 + y * 8 + x) as u64) % 256) as u8
                })
            })
            .collect();
        let single = median_frame(&frames).unwrap();
        let doubled: Vec<Frame> = frames.iter().chain(frames.iter()).cloned().collect();
        assert_eq!(median_frame(&doubled).unwrap().luma, single.luma);
    }

    #[test]
    fn empty_chunk_is_an_error() {
        assert!(matches!(median_frame(&[]), Err(TraceError::EmptyChunk)));
    }

    #[test]
    fn frame_equal_to_background_yields_none() {
        let f = frame_with(0.0, 16, 16, |x, _| (x * 3) as u8);
        assert_eq!(locate_cursor(&f, &f, &[], 25).unwrap(), None);
    }

    #[test]
    fn masked_blob_is_ignored_in_favor_of_outside_blob() {
        let bg = frame_with(0.0, 32, 32, |_, _| 100);
        let mut frame = bg.clone();
        frame.luma[5 * 32 + 5] = 250; // stronger blob, inside the mask
        frame.luma[20 * 32 + 20] = 180; // weaker blob, outside
        let mask = MaskRegion {
            rect: Rect { x: 2, y: 2, width: 8, height: 8 },
            source: MaskSource::Manual,
        };
        let p = locate_cursor(&frame, &bg, &[mask], 25).unwrap().unwrap();
        assert_eq!((p.x, p.y), (20.0, 20.0));
        assert_eq!(p.confidence, 80.0);
    }

    #[test]
    fn tie_breaks_to_smallest_row_major_index() {
        let bg = frame_with(0.0, 16, 16, |_, _| 0);
        let mut frame = bg.clone();
        frame.luma[40] = 200;
        frame.luma[90] = 200;
        let p = locate_cursor(&frame, &bg, &[], 25).unwrap().unwrap();
        assert_eq!((p.x as usize, p.y as usize), (40 % 16, 40 / 16));
    }

    #[test]
    fn mask_outside_frame_is_an_error() {
        let f = frame_with(0.0, 16, 16, |_, _| 0);
        let mask = MaskRegion {
            rect: Rect { x: 10, y: 10, width: 10, height: 4 },
            source: MaskSource::FaceDetector,
        };
        assert!(matches!(
            locate_cursor(&f, &f, &[mask], 25),
            Err(TraceError::MaskOutOfBounds { .. })
        ));
    }

    fn traced_spec() -> SyntheticSpec {
        SyntheticSpec {
            width: 128,
            height: 96,
            fps_num: 10,
            fps_den: 1,
            duration: 6.0,
            background_seed: 5,
            cursor_path: vec![
                Waypoint { t: 0.0, x: 12.0, y: 10.0 },
                Waypoint { t: 6.0, x: 110.0, y: 80.0 },
            ],
            motion_segments: vec![],
            motion_speed: 40.0,
            noise_sigma: 0.0,
            blob_delta: 60,
            blob_size: 5,
            distractors: vec![],
        }
    }

    fn single_chunk(frames: &[Frame]) -> StableChunk {
        let chunks = detect_stable_chunks(frames, &StabilityConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        chunks[0]
    }

    #[test]
    fn synthetic_diagonal_path_recovered_within_two_pixels() {
        let spec = traced_spec();
        let (frames, gt) = generate_synthetic(&spec, 3).unwrap();
        let chunk = single_chunk(&frames);
        let trace = extract_trace(0, &chunk, &frames, &[], &TraceConfig::default())
            .unwrap()
            .expect("trace emitted");
        let mut close = 0usize;
        for p in &trace.points {
            let frame_idx = ((p.t + chunk.t_start) * 10.0).round() as usize;
            let (gx, gy) = gt.cursor[frame_idx].unwrap();
            let d = ((p.x - gx as f64).powi(2) + (p.y - gy as f64).powi(2)).sqrt();
            if d <= 2.0 {
                close += 1;
            }
            assert!(p.t >= 0.0 && p.t <= chunk.duration());
        }
        assert!(close as f64 >= 0.95 * trace.points.len() as f64);
        assert!(trace.points.len() >= 55, "points: {}", trace.points.len());
    }

    #[test]
    fn absent_cursor_emits_no_trace() {
        let mut spec = traced_spec();
        spec.cursor_path = vec![]; // narrator never brings the cursor in
        let (frames, _) = generate_synthetic(&spec, 3).unwrap();
        let chunk = single_chunk(&frames);
        let trace = extract_trace(0, &chunk, &frames, &[], &TraceConfig::default()).unwrap();
        assert!(trace.is_none());
    }

    #[test]
    fn masking_a_wiggling_distractor_leaves_the_trace_unchanged() {
        use crate::synth::Distractor;
        let mut spec = traced_spec();
        // The change-pixel budget scales with frame area, so the distractor
        // fixture runs at a larger frame with a matching fraction.
        spec.width = 320;
        spec.height = 240;
        spec.distractors = vec![Distractor {
            rect: Rect { x: 280, y: 8, width: 12, height: 12 },
            delta: 30,
        }];
        // cursor path clear of the distractor corner
        spec.cursor_path = vec![
            Waypoint { t: 0.0, x: 20.0, y: 120.0 },
            Waypoint { t: 6.0, x: 300.0, y: 230.0 },
        ];
        let (frames, _) = generate_synthetic(&spec, 3).unwrap();
        let stability = StabilityConfig {
            change_pixel_fraction: 0.01,
            ..Default::default()
        };
        let chunks = detect_stable_chunks(&frames, &stability).unwrap();
        assert_eq!(chunks.len(), 1, "chunks: {chunks:?}");
        let chunk = chunks[0];
        let mask = MaskRegion {
            rect: Rect { x: 280, y: 8, width: 12, height: 12 },
            source: MaskSource::FaceDetector,
        };
        let cfg = TraceConfig::default();
        let masked = extract_trace(0, &chunk, &frames, &[mask], &cfg).unwrap().unwrap();
        let unmasked = extract_trace(0, &chunk, &frames, &[], &cfg).unwrap().unwrap();
        assert_eq!(masked.points.len(), unmasked.points.len());
        for (a, b) in masked.points.iter().zip(&unmasked.points) {
            assert!((a.x - b.x).abs() <= 2.0 && (a.y - b.y).abs() <= 2.0);
        }
        for p in &masked.points {
            assert!(!mask.rect.contains(p.x as u32, p.y as u32));
        }
    }

    #[test]
    fn bbox_of_two_points_is_their_min_max() {
        let trace = Trace {
            chunk_id: 0,
            points: vec![
                TracePoint { t: 0.0, x: 10.0, y: 20.0, confidence: 1.0 },
                TracePoint { t: 0.1, x: 30.0, y: 5.0, confidence: 1.0 },
            ],
            image_ref: None,
        };
        let b = trace_to_bbox(&trace).unwrap();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (10.0, 30.0, 5.0, 20.0));
    }

    #[test]
    fn single_point_bbox_is_degenerate() {
        let trace = Trace {
            chunk_id: 0,
            points: vec![TracePoint { t: 0.0, x: 7.0, y: 7.0, confidence: 1.0 }],
            image_ref: None,
        };
        let b = trace_to_bbox(&trace).unwrap();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (7.0, 7.0, 7.0, 7.0));
    }

    #[test]
    fn empty_trace_bbox_is_an_error() {
        let trace = Trace { chunk_id: 0, points: vec![], image_ref: None };
        assert!(matches!(trace_to_bbox(&trace), Err(TraceError::EmptyTrace)));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_points() -> impl Strategy<Value = Vec<TracePoint>> {
        proptest::collection::vec(
            (0u32..640, 0u32..480).prop_map(|(x, y)| TracePoint {
                t: 0.0,
                x: x as f64,
                y: y as f64,
                confidence: 1.0,
            }),
            1..40,
        )
    }

    proptest! {
        #[test]
        fn bbox_matches_exhaustive_min_max(points in arb_points()) {
            let trace = Trace { chunk_id: 0, points, image_ref: None };
            let b = trace_to_bbox(&trace).unwrap();
            let xs: Vec<f64> = trace.points.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = trace.points.iter().map(|p| p.y).collect();
            prop_assert_eq!(b.x_min, xs.iter().cloned().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(b.x_max, xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            prop_assert_eq!(b.y_min, ys.iter().cloned().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(b.y_max, ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            // every point inside, and minimality: shrinking any side excludes one
            for p in &trace.points {
                prop_assert!(b.contains(p.x, p.y));
            }
            let eps = 1.0;
            prop_assert!(trace.points.iter().any(|p| p.x < b.x_min + eps));
            prop_assert!(trace.points.iter().any(|p| p.x > b.x_max - eps));
            prop_assert!(trace.points.iter().any(|p| p.y < b.y_min + eps));
            prop_assert!(trace.points.iter().any(|p| p.y > b.y_max - eps));
        }
    }
}
