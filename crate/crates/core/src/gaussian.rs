//! Separable Gaussian smoothing of 8-bit difference images.
//!
//! This sits on the hot path of stable-chunk detection, so the shipped blur
//! runs on precomputed integer weights (Q8 fixed point, kernel sum exactly
//! 256) with a sparse fast path: when the nonzero support of the input is a
//! small box, only that box (plus kernel margin) is convolved and the rest of
//! the output is exactly zero. A straight floating-point reference
//! implementation is provided for verification.
//!
//! Borders are mirrored without repeating the edge sample
//! (`x[-1] == x[1]`).

use crate::scalar::Real;

/// Kernel radius is `ceil(3 * sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Normalized 1-D Gaussian kernel of length `2 * radius + 1`.
pub fn gaussian_kernel<S: Real>(sigma: f64) -> Vec<S> {
    assert!(sigma > 0.0, "sigma must be positive");
    let r = kernel_radius(sigma) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k.into_iter().map(S::cast_f64).collect()
}

/// Q8 quantization of the kernel; symmetric, weights sum to exactly 256
/// (largest-remainder rounding over the center and mirrored pairs).
pub fn quantized_kernel(sigma: f64) -> Vec<u16> {
    let float: Vec<f64> = gaussian_kernel(sigma);
    let r = float.len() / 2;
    let mut center = (float[r] * 256.0).floor() as u16;
    let mut pairs: Vec<u16> = (1..=r)
        .map(|d| (float[r + d] * 256.0).floor() as u16)
        .collect();
    let mut deficit = 256 - center - 2 * pairs.iter().sum::<u16>();
    let mut order: Vec<(usize, f64)> = (1..=r)
        .map(|d| {
            let v = float[r + d] * 256.0;
            (d - 1, v - v.floor())
        })
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut i = 0;
    while deficit >= 2 && !order.is_empty() {
        pairs[order[i % order.len()].0] += 1;
        deficit -= 2;
        i += 1;
    }
    center += deficit;
    let mut q = Vec::with_capacity(float.len());
    q.extend(pairs.iter().rev());
    q.push(center);
    q.extend(pairs.iter());
    debug_assert_eq!(q.iter().sum::<u16>(), 256);
    q
}

#[inline]
fn reflect101(mut idx: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if idx < 0 {
            idx = -idx;
        } else if idx >= n {
            idx = 2 * n - 2 - idx;
        } else {
            return idx as usize;
        }
    }
}

/// Smoothed image in Q8.8 fixed point (value * 256).
pub struct Smoothed {
    pub width: usize,
    pub height: usize,
    pub data_q8: Vec<u16>,
}

impl Smoothed {
    /// Mean in luma units.
    pub fn mean(&self) -> f64 {
        let sum: u64 = self.data_q8.iter().map(|&v| v as u64).sum();
        sum as f64 / 256.0 / (self.width * self.height) as f64
    }

    /// Count of pixels strictly above a threshold in luma units.
    pub fn count_above(&self, threshold: f64) -> usize {
        let thr_q8 = (threshold * 256.0).floor() as u32;
        self.data_q8.iter().filter(|&&v| v as u32 > thr_q8).count()
    }

    pub fn value_at(&self, x: usize, y: usize) -> f64 {
        self.data_q8[y * self.width + x] as f64 / 256.0
    }
}

/// Integer separable Gaussian blur of an 8-bit image.
pub fn gaussian_blur_q8(pixels: &[u8], width: usize, height: usize, sigma: f64) -> Smoothed {
    assert_eq!(pixels.len(), width * height);
    let kernel = quantized_kernel(sigma);
    let r = kernel.len() / 2;

    // Nonzero support box, expanded so mirrored taps cannot escape it.
    let support = nonzero_box(pixels, width, height);
    let (x0, x1, y0, y1) = match support {
        None => {
            return Smoothed {
                width,
                height,
                data_q8: vec![0; width * height],
            }
        }
        Some((bx0, bx1, by0, by1)) => {
            let m = 2 * r;
            (
                bx0.saturating_sub(m),
                (bx1 + m).min(width),
                by0.saturating_sub(m),
                (by1 + m).min(height),
            )
        }
    };

    let out_w = x1 - x0;

    // Horizontal pass over the rows the vertical pass will read; the
    // intermediate is rounded back to u8 so both passes run on narrow
    // integers (costs at most half a luma of precision).
    let iy0 = y0.saturating_sub(r);
    let iy1 = (y1 + r).min(height);
    let inter_h = iy1 - iy0;
    let mut inter = vec![0u8; inter_h * out_w];
    let mut scratch = vec![0i32; out_w];
    for (row_i, y) in (iy0..iy1).enumerate() {
        let src = &pixels[y * width..(y + 1) * width];
        let dst = &mut inter[row_i * out_w..(row_i + 1) * out_w];
        horizontal_pass(src, dst, &mut scratch, x0, width, &kernel, r);
    }

    // Vertical pass, accumulating whole rows for cache-friendly access.
    // The kernel is symmetric, so taps at +/-d share one multiply.
    // Q8 weights sum to 256, so accumulators stay under 256 * 510 and the
    // wrapping ops cannot actually wrap.
    let mut data_q8 = vec![0u16; width * height];
    let mut acc = vec![0i32; out_w];
    let band_row = |sy: usize| -> Option<&[u8]> {
        (sy >= iy0 && sy < iy1).then(|| &inter[(sy - iy0) * out_w..(sy - iy0 + 1) * out_w])
    };
    for y in y0..y1 {
        let center = band_row(y).expect("output rows lie inside the prepared band");
        let w_c = kernel[r] as i32;
        for (a, &s) in acc.iter_mut().zip(center) {
            *a = w_c.wrapping_mul(s as i32);
        }
        for d in 1..=r {
            let w = kernel[r + d] as i32;
            if w == 0 {
                continue;
            }
            let up = band_row(reflect101(y as i64 - d as i64, height as i64));
            let down = band_row(reflect101(y as i64 + d as i64, height as i64));
            match (up, down) {
                (Some(u), Some(dn)) => {
                    for ((a, &s1), &s2) in acc.iter_mut().zip(u).zip(dn) {
                        *a = a.wrapping_add(w.wrapping_mul(s1 as i32 + s2 as i32));
                    }
                }
                (Some(row), None) | (None, Some(row)) => {
                    for (a, &s) in acc.iter_mut().zip(row) {
                        *a = a.wrapping_add(w.wrapping_mul(s as i32));
                    }
                }
                // both taps outside the prepared band read zeros
                (None, None) => {}
            }
        }
        let dst = &mut data_q8[y * width + x0..y * width + x0 + out_w];
        for (d, &a) in dst.iter_mut().zip(&acc) {
            *d = a as u16; // already Q8.8
        }
    }

    Smoothed {
        width,
        height,
        data_q8,
    }
}

fn horizontal_pass(
    src: &[u8],
    dst: &mut [u8],
    scratch: &mut [i32],
    x0: usize,
    width: usize,
    kernel: &[u16],
    r: usize,
) {
    let out_w = dst.len();
    // Interior: accumulate shifted source windows so the inner loop
    // vectorizes; symmetric taps at +/-d share one multiply.
    let lo = x0.max(r);
    let hi = (x0 + out_w).min(width.saturating_sub(r));
    if lo < hi {
        let n = hi - lo;
        let acc = &mut scratch[..n];
        let w_c = kernel[r] as i32;
        for (a, &s) in acc.iter_mut().zip(&src[lo..hi]) {
            *a = w_c.wrapping_mul(s as i32);
        }
        for d in 1..=r {
            let w = kernel[r + d] as i32;
            if w == 0 {
                continue;
            }
            let left = &src[lo - d..hi - d];
            let right = &src[lo + d..hi + d];
            for ((a, &s1), &s2) in acc.iter_mut().zip(left).zip(right) {
                *a = a.wrapping_add(w.wrapping_mul(s1 as i32 + s2 as i32));
            }
        }
        for (i, &a) in acc.iter().enumerate() {
            dst[lo - x0 + i] = ((a + 128) >> 8) as u8;
        }
    }
    // Borders (and degenerate widths): direct taps with mirrored indexing.
    for (ox, d) in dst.iter_mut().enumerate() {
        let x = x0 + ox;
        if x >= lo && x < hi {
            continue;
        }
        let mut acc: u32 = 0;
        for (q, &w) in kernel.iter().enumerate() {
            let sx = reflect101(x as i64 + q as i64 - r as i64, width as i64);
            acc += w as u32 * src[sx] as u32;
        }
        *d = ((acc + 128) >> 8) as u8;
    }
}

fn nonzero_box(pixels: &[u8], width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let mut y0 = None;
    let mut y1 = 0;
    let mut x0 = width;
    let mut x1 = 0;
    for y in 0..height {
        let row = &pixels[y * width..(y + 1) * width];
        if row.iter().all(|&v| v == 0) {
            continue;
        }
        if y0.is_none() {
            y0 = Some(y);
        }
        y1 = y + 1;
        let first = row.iter().position(|&v| v != 0).unwrap();
        let last = row.iter().rposition(|&v| v != 0).unwrap();
        x0 = x0.min(first);
        x1 = x1.max(last + 1);
    }
    y0.map(|y0| (x0, x1, y0, y1))
}

/// Direct float implementation of the same blur (same kernel definition and
/// border rule), for verification.
pub fn gaussian_blur_reference<S: Real>(
    pixels: &[u8],
    width: usize,
    height: usize,
    sigma: f64,
) -> Vec<S> {
    assert_eq!(pixels.len(), width * height);
    let kernel: Vec<S> = gaussian_kernel(sigma);
    let r = kernel.len() / 2;
    let mut inter = vec![S::zero(); width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = S::zero();
            for (q, &w) in kernel.iter().enumerate() {
                let sx = reflect101(x as i64 + q as i64 - r as i64, width as i64);
                acc = acc + w * S::cast_u8(pixels[y * width + sx]);
            }
            inter[y * width + x] = acc;
        }
    }
    let mut out = vec![S::zero(); width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = S::zero();
            for (q, &w) in kernel.iter().enumerate() {
                let sy = reflect101(y as i64 + q as i64 - r as i64, height as i64);
                acc = acc + w * inter[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k: Vec<f64> = gaussian_kernel(3.0);
        assert_eq!(k.len(), 19);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn quantized_kernel_sums_to_256() {
        for sigma in [0.5, 1.0, 2.0, 3.0, 5.0] {
            assert_eq!(quantized_kernel(sigma).iter().sum::<u16>(), 256);
        }
    }

    #[test]
    fn integer_blur_tracks_float_reference() {
        let (w, h) = (40, 25);
        let mut pixels = vec![0u8; w * h];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = (crate::hash::splitmix64(i as u64) % 256) as u8;
        }
        let int = gaussian_blur_q8(&pixels, w, h, 2.0);
        let float: Vec<f64> = gaussian_blur_reference(&pixels, w, h, 2.0);
        for i in 0..w * h {
            let iv = int.data_q8[i] as f64 / 256.0;
            assert!(
                (iv - float[i]).abs() < 1.5,
                "pixel {i}: int {iv} vs float {}",
                float[i]
            );
        }
        let float_mean = float.iter().sum::<f64>() / (w * h) as f64;
        assert!((int.mean() - float_mean).abs() < 0.05);
    }

    #[test]
    fn sparse_path_matches_dense_result() {
        let (w, h) = (64, 64);
        // Tiny nonzero box in the corner exercises the sparse path.
        let mut sparse = vec![0u8; w * h];
        sparse[3 * w + 5] = 200;
        sparse[4 * w + 6] = 100;
        let a = gaussian_blur_q8(&sparse, w, h, 3.0);
        let reference: Vec<f64> = gaussian_blur_reference(&sparse, w, h, 3.0);
        for i in 0..w * h {
            assert!((a.data_q8[i] as f64 / 256.0 - reference[i]).abs() < 1.5, "pixel {i}");
        }
    }

    #[test]
    fn impulse_peak_matches_analytic_center_weight() {
        // Unit impulse: the blurred center equals the squared center weight.
        let (w, h) = (33, 33);
        let mut pixels = vec![0u8; w * h];
        pixels[16 * w + 16] = 255;
        let k: Vec<f64> = gaussian_kernel(2.0);
        let center = k[k.len() / 2];
        let expected = 255.0 * center * center;
        let smoothed = gaussian_blur_q8(&pixels, w, h, 2.0);
        assert!((smoothed.value_at(16, 16) - expected).abs() < 0.5);
        // sanity: the peak sits near 10 luma, well under the default floor
        assert!(expected > 9.0 && expected < 11.0);
    }

    #[test]
    fn all_zero_input_blurs_to_zero() {
        let s = gaussian_blur_q8(&vec![0u8; 16 * 16], 16, 16, 3.0);
        assert!(s.data_q8.iter().all(|&v| v == 0));
        assert_eq!(s.mean(), 0.0);
    }
}
