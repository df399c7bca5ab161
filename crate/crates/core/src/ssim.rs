//! Single-window structural similarity over 8-bit patches.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Error, Debug, PartialEq, Eq)]
pub enum SsimError {
    #[error("patches have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("patch of {len} samples is smaller than the 8x8 minimum")]
    PatchTooSmall { len: usize },
}

pub const MIN_PATCH_LEN: usize = 64;

fn c1<S: Real>() -> S {
    // (0.01 * 255)^2
    S::cast_f64(6.5025)
}

fn c2<S: Real>() -> S {
    // (0.03 * 255)^2
    S::cast_f64(58.5225)
}

/// SSIM of two equal-size patches, computed over the whole patch as a single
/// window with population statistics:
/// `((2*mu_a*mu_b + C1) * (2*cov + C2)) / ((mu_a^2 + mu_b^2 + C1) * (var_a + var_b + C2))`.
///
/// The value is in `[-1, 1]`; `ssim(a, a)` is exactly 1 and the function is
/// exactly symmetric in its arguments.
pub fn ssim<S: Real>(a: &[u8], b: &[u8]) -> Result<S, SsimError> {
    if a.len() != b.len() {
        return Err(SsimError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.len() < MIN_PATCH_LEN {
        return Err(SsimError::PatchTooSmall { len: a.len() });
    }
    // Integer moment sums are exact; the division below is the only rounding.
    let mut sa: u64 = 0;
    let mut sb: u64 = 0;
    let mut saa: u64 = 0;
    let mut sbb: u64 = 0;
    let mut sab: u64 = 0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as u64, y as u64);
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let n = S::cast_usize(a.len());
    let mu_a = S::cast_f64(sa as f64) / n;
    let mu_b = S::cast_f64(sb as f64) / n;
    let var_a = S::cast_f64(saa as f64) / n - mu_a * mu_a;
    let var_b = S::cast_f64(sbb as f64) / n - mu_b * mu_b;
    let cov = S::cast_f64(sab as f64) / n - mu_a * mu_b;
    let two = S::cast_f64(2.0);
    let num = (two * (mu_a * mu_b) + c1::<S>()) * (two * cov + c2::<S>());
    let den = (mu_a * mu_a + mu_b * mu_b + c1::<S>()) * (var_a + var_b + c2::<S>());
    Ok(num / den)
}
