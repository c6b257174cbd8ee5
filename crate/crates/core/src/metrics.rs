//! Image-quality metrics: PSNR and SSIM.

use crate::error::{Error, Result};
use crate::image::IntensityImage;

fn check_pair(a: &IntensityImage, b: &IntensityImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::validation(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.unit() != b.unit() {
        return Err(Error::validation("image unit tags differ"));
    }
    Ok(())
}

pub fn mse(a: &IntensityImage, b: &IntensityImage) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.values().len() as f64;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB against the given peak value
/// (255 for 8-bit gray). Identical images report +inf.
pub fn psnr(a: &IntensityImage, b: &IntensityImage, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::validation("psnr peak must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5, K1 = 0.01, K2 = 0.03), evaluated where the full window
/// fits. Result lies in [-1, 1].
pub fn ssim(a: &IntensityImage, b: &IntensityImage, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::validation("ssim peak must be positive"));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }

    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);
    let half = SSIM_WINDOW / 2;

    let mut acc = 0.0;
    let mut count = 0usize;
    for cy in half..h - half {
        for cx in half..w - half {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let wgt = kernel[ky * SSIM_WINDOW + kx];
                    let va = a.get(cx + kx - half, cy + ky - half);
                    let vb = b.get(cx + kx - half, cy + ky - half);
                    ma += wgt * va;
                    mb += wgt * vb;
                    sa += wgt * va * va;
                    sb += wgt * vb * vb;
                    sab += wgt * va * vb;
                }
            }
            let var_a = sa - ma * ma;
            let var_b = sb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            acc += s;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut k = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -half..=half {
        for x in -half..=half {
            let r2 = (x * x + y * y) as f64;
            k.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}
