//! Synthetic ground-truth videos for verifying the pixel pipeline.
//!
//! The generator renders a deterministic value-noise background, an optional
//! scrolling motion (background change), a small high-contrast cursor blob
//! following a waypoint path, optional flickering distractor regions (stand-ins
//! for a narrator's face), and per-pixel Gaussian noise. [`GroundTruth`]
//! records the exact cursor pixel per frame and the static/moving intervals,
//! so detector output can be scored against a known answer.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, FormatError, Rect, StreamHeader, MAGIC};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("waypoint {index} at ({x}, {y}) is outside the {width}x{height} frame")]
    WaypointOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("waypoints must be sorted by time (waypoint {index} goes backwards)")]
    WaypointsUnsorted { index: usize },
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// A rectangle whose luma flickers by `delta` on odd frames, imitating
/// small non-cursor motion (e.g. a narrator webcam inset).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub rect: Rect,
    #[serde(default = "default_flicker")]
    pub delta: u8,
}

fn default_flicker() -> u8 {
    20
}

fn default_fps_den() -> u32 {
    1
}

fn default_blob_delta() -> u8 {
    60
}

fn default_blob_size() -> u32 {
    5
}

fn default_motion_speed() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    pub fps_num: u32,
    #[serde(default = "default_fps_den")]
    pub fps_den: u32,
    pub duration: f64,
    /// Seed for the background texture (independent of the run seed so the
    /// same scene can be rendered under different noise).
    pub background_seed: u64,
    /// Cursor waypoints, linearly interpolated; empty means no cursor.
    #[serde(default)]
    pub cursor_path: Vec<Waypoint>,
    /// Intervals during which the background scrolls horizontally.
    #[serde(default)]
    pub motion_segments: Vec<(f64, f64)>,
    /// Scroll speed in pixels/second during motion segments.
    #[serde(default = "default_motion_speed")]
    pub motion_speed: f64,
    /// Per-pixel Gaussian noise standard deviation in luma units.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Luma delta of the cursor blob center against the background.
    #[serde(default = "default_blob_delta")]
    pub blob_delta: u8,
    /// Blob side in pixels (odd); contrast decays away from the center so
    /// the center pixel is the unique maximum.
    #[serde(default = "default_blob_size")]
    pub blob_size: u32,
    #[serde(default)]
    pub distractors: Vec<Distractor>,
}

impl SyntheticSpec {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps()).round() as usize
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            width: self.width,
            height: self.height,
            fps_num: self.fps_num,
            fps_den: self.fps_den,
            planes: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::BadSpec("zero frame dimension".into()));
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(SynthError::BadSpec("zero frame rate".into()));
        }
        if self.duration <= 0.0 {
            return Err(SynthError::BadSpec("non-positive duration".into()));
        }
        if self.blob_size % 2 == 0 {
            return Err(SynthError::BadSpec("blob_size must be odd".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::BadSpec("negative noise_sigma".into()));
        }
        for (i, w) in self.cursor_path.iter().enumerate() {
            if i > 0 && w.t < self.cursor_path[i - 1].t {
                return Err(SynthError::WaypointsUnsorted { index: i });
            }
            if w.x < 0.0 || w.x > self.width as f64 || w.y < 0.0 || w.y > self.height as f64 {
                return Err(SynthError::WaypointOutOfBounds {
                    index: i,
                    x: w.x,
                    y: w.y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        for d in &self.distractors {
            if !d.rect.within_frame(self.width, self.height) {
                return Err(SynthError::BadSpec("distractor outside frame".into()));
            }
        }
        Ok(())
    }
}

/// Everything the generator knows about the scene, for scoring detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    /// Exact cursor center pixel per frame; `None` when no cursor is rendered.
    pub cursor: Vec<Option<(u32, u32)>>,
    /// Intervals where the background holds still.
    pub static_intervals: Vec<(f64, f64)>,
    /// Intervals where the background scrolls.
    pub motion_segments: Vec<(f64, f64)>,
    /// The unshifted background plane (no cursor, distractors, or noise).
    #[serde(with = "base64_bytes")]
    pub background: Vec<u8>,
}

mod base64_bytes {
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

// splitmix64 finalizer: deterministic per-coordinate lattice hash.
fn hash64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, level: u64, ix: i64, iy: i64) -> f64 {
    let h = hash64(
        seed ^ hash64(level)
            ^ (ix as u64).wrapping_mul(0x8da6b343)
            ^ (iy as u64).wrapping_mul(0xd8163841_0000_0001),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise in [0, 1), defined over the whole integer plane so
/// scrolled backgrounds sample the same texture at an offset.
fn value_noise(seed: u64, level: u64, cell: i64, x: i64, y: i64) -> f64 {
    let cx = x.div_euclid(cell);
    let cy = y.div_euclid(cell);
    let fx = x.rem_euclid(cell) as f64 / cell as f64;
    let fy = y.rem_euclid(cell) as f64 / cell as f64;
    let v00 = lattice(seed, level, cx, cy);
    let v10 = lattice(seed, level, cx + 1, cy);
    let v01 = lattice(seed, level, cx, cy + 1);
    let v11 = lattice(seed, level, cx + 1, cy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

/// Background texture sample: two value-noise octaves for low-frequency
/// structure plus strong per-pixel dither. The dither guarantees every
/// 32x32 patch at least ~30 luma of standard deviation, which keeps the
/// patch-SSIM of a static background well above the verification threshold
/// even under heavy sensor noise.
pub fn background_at(seed: u64, x: i64, y: i64) -> u8 {
    let coarse = (value_noise(seed, 1, 16, x, y) - 0.5) * 100.0;
    let fine = (value_noise(seed, 2, 4, x, y) - 0.5) * 40.0;
    let dither = (lattice(seed, 3, x, y) - 0.5) * 110.0;
    (128.0 + coarse + fine + dither).round().clamp(0.0, 255.0) as u8
}

/// Inverse standard-normal CDF (Acklam's rational approximation); feeds the
/// quantile-table noise sampler.
fn inv_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_normal_cdf(1.0 - p)
    }
}

fn interpolate_cursor(path: &[Waypoint], t: f64) -> Option<(f64, f64)> {
    if path.is_empty() {
        return None;
    }
    if t <= path[0].t {
        return Some((path[0].x, path[0].y));
    }
    let last = path.last().unwrap();
    if t >= last.t {
        return Some((last.x, last.y));
    }
    let i = path.partition_point(|w| w.t <= t);
    let (a, b) = (&path[i - 1], &path[i]);
    if b.t <= a.t {
        return Some((b.x, b.y));
    }
    let f = (t - a.t) / (b.t - a.t);
    Some((a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f))
}

fn in_motion(segments: &[(f64, f64)], t: f64) -> bool {
    segments.iter().any(|&(s, e)| t > s && t <= e)
}

const NOISE_TABLE_BITS: u32 = 12;

struct Renderer {
    spec: SyntheticSpec,
    rng: ChaCha8Rng,
    /// sigma-scaled normal quantiles; empty means no noise.
    noise_table: Vec<i16>,
    offset: f64,
    /// Background plane for `plane_offset`, re-rendered only when the
    /// rounded scroll offset changes.
    plane: Vec<u8>,
    plane_offset: i64,
    index: usize,
    frame_count: usize,
}

impl Renderer {
    fn new(spec: &SyntheticSpec, seed: u64) -> Result<Self, SynthError> {
        spec.validate()?;
        let noise_table = if spec.noise_sigma > 0.0 {
            let n = 1usize << NOISE_TABLE_BITS;
            (0..n)
                .map(|i| {
                    let p = (i as f64 + 0.5) / n as f64;
                    (inv_normal_cdf(p) * spec.noise_sigma).round() as i16
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut r = Renderer {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise_table,
            offset: 0.0,
            plane: Vec::new(),
            plane_offset: 0,
            index: 0,
            frame_count: spec.frame_count(),
        };
        r.render_plane(0);
        Ok(r)
    }

    fn render_plane(&mut self, off: i64) {
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        self.plane = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                self.plane[y * w + x] =
                    background_at(self.spec.background_seed, x as i64 + off, y as i64);
            }
        }
        self.plane_offset = off;
    }

    fn next_frame(&mut self) -> Option<(Frame, Option<(u32, u32)>)> {
        if self.index >= self.frame_count {
            return None;
        }
        let t = self.spec.header().timestamp(self.index);
        if self.index > 0 && in_motion(&self.spec.motion_segments, t) {
            self.offset += self.spec.motion_speed * self.spec.fps_den as f64
                / self.spec.fps_num as f64;
        }
        let off = self.offset.round() as i64;
        if off != self.plane_offset {
            self.render_plane(off);
        }
        let spec = &self.spec;
        let (w, h) = (spec.width as usize, spec.height as usize);
        let flicker_on = self.index % 2 == 1;

        let mut luma = self.plane.clone();
        if flicker_on {
            for d in &spec.distractors {
                for y in d.rect.y..d.rect.y + d.rect.height {
                    let row = y as usize * w;
                    for x in d.rect.x..d.rect.x + d.rect.width {
                        let v = &mut luma[row + x as usize];
                        *v = v.saturating_add(d.delta);
                    }
                }
            }
        }

        let cursor = interpolate_cursor(&spec.cursor_path, t).map(|(cx, cy)| {
            let px = (cx.round() as u32).min(spec.width - 1);
            let py = (cy.round() as u32).min(spec.height - 1);
            let r = (spec.blob_size / 2) as i64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let bx = px as i64 + dx;
                    let by = py as i64 + dy;
                    if bx < 0 || by < 0 || bx >= w as i64 || by >= h as i64 {
                        continue;
                    }
                    let ring = dx.abs().max(dy.abs()) as u32;
                    let delta =
                        (spec.blob_delta as u32 * (r as u32 + 1 - ring) / (r as u32 + 1)) as u8;
                    let idx = by as usize * w + bx as usize;
                    let base = luma[idx];
                    luma[idx] = if base as u16 + delta as u16 <= 255 {
                        base + delta
                    } else {
                        base - delta
                    };
                }
            }
            (px, py)
        });

        if !self.noise_table.is_empty() {
            let shift = 32 - NOISE_TABLE_BITS;
            for v in luma.iter_mut() {
                let idx = (self.rng.next_u32() >> shift) as usize;
                let n = self.noise_table[idx];
                *v = (*v as i16 + n).clamp(0, 255) as u8;
            }
        }

        self.index += 1;
        Some((Frame::new(t, spec.width, spec.height, luma), cursor))
    }

    fn ground_truth(&self, cursor: Vec<Option<(u32, u32)>>) -> GroundTruth {
        let spec = &self.spec;
        let mut motion: Vec<(f64, f64)> = spec
            .motion_segments
            .iter()
            .map(|&(s, e)| (s.max(0.0), e.min(spec.duration)))
            .filter(|&(s, e)| e > s)
            .collect();
        motion.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for seg in motion {
            match merged.last_mut() {
                Some(last) if seg.0 <= last.1 => last.1 = last.1.max(seg.1),
                _ => merged.push(seg),
            }
        }
        let mut statics = Vec::new();
        let mut cursor_t = 0.0;
        for &(s, e) in &merged {
            if s > cursor_t {
                statics.push((cursor_t, s));
            }
            cursor_t = e;
        }
        if cursor_t < spec.duration {
            statics.push((cursor_t, spec.duration));
        }
        let (w, h) = (spec.width as usize, spec.height as usize);
        let mut background = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                background[y * w + x] = background_at(spec.background_seed, x as i64, y as i64);
            }
        }
        GroundTruth {
            width: spec.width,
            height: spec.height,
            cursor,
            static_intervals: statics,
            motion_segments: merged,
            background,
        }
    }
}

/// Load a spec from a TOML file.
pub fn load_spec(path: &std::path::Path) -> Result<SyntheticSpec, SynthError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SynthError::BadSpec(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| SynthError::BadSpec(e.to_string()))
}

/// Render the whole video into memory. Deterministic for a fixed
/// `(spec, seed)` pair.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(Vec<Frame>, GroundTruth), SynthError> {
    let mut r = Renderer::new(spec, seed)?;
    let mut frames = Vec::with_capacity(r.frame_count);
    let mut cursor = Vec::with_capacity(r.frame_count);
    while let Some((frame, c)) = r.next_frame() {
        frames.push(frame);
        cursor.push(c);
    }
    let gt = r.ground_truth(cursor);
    Ok((frames, gt))
}

/// Render straight into an `NMV1` sink, one frame resident at a time.
pub fn generate_to_writer<W: Write>(
    spec: &SyntheticSpec,
    seed: u64,
    sink: &mut W,
) -> Result<GroundTruth, SynthError> {
    let mut r = Renderer::new(spec, seed)?;
    let header = spec.header();
    sink.write_all(MAGIC).map_err(FormatError::Io)?;
    writeln!(
        sink,
        "{} {} {} {} {}",
        header.width, header.height, header.fps_num, header.fps_den, header.planes
    )
    .map_err(FormatError::Io)?;
    let mut cursor = Vec::with_capacity(r.frame_count);
    while let Some((frame, c)) = r.next_frame() {
        sink.write_all(&frame.luma).map_err(FormatError::Io)?;
        cursor.push(c);
    }
    Ok(r.ground_truth(cursor))
}
