//! Reference image-quality metrics: PSNR, single-scale SSIM, and the
//! Laplacian sharpness statistic used by the blur detector.

use super::{Border, Image, Kernel2D};
use crate::error::{Error, Result};

/// Sentinel reported by [`psnr`] when the two images are identical.
pub const PSNR_INFINITE: f64 = f64::INFINITY;

/// Peak signal-to-noise ratio in decibels against a peak of 1.0.
/// Identical images yield [`PSNR_INFINITE`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(PSNR_INFINITE)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean single-scale SSIM over the valid (fully covered) window positions.
/// 3-channel inputs are reduced to luminance first. Uses the 11x11 Gaussian
/// window with sigma 1.5 and stabilizers C1 = 0.01^2, C2 = 0.03^2.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(a.width(), a.height(), SSIM_WINDOW));
    }
    let la = a.to_luminance();
    let lb = b.to_luminance();
    let w = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let r = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in r..a.height() - r {
        for cx in r..a.width() - r {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wv = w[i * SSIM_WINDOW + j];
                    mu_a += wv * la.get(cx + j - r, cy + i - r, 0);
                    mu_b += wv * lb.get(cx + j - r, cy + i - r, 0);
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wv = w[i * SSIM_WINDOW + j];
                    let da = la.get(cx + j - r, cy + i - r, 0) - mu_a;
                    let db = lb.get(cx + j - r, cy + i - r, 0) - mu_b;
                    var_a += wv * da * da;
                    var_b += wv * db * db;
                    cov += wv * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Variance of the 3x3 Laplacian response, a cheap no-reference sharpness
/// statistic. Higher values indicate more high-frequency content.
pub fn laplacian_variance(img: &Image) -> f64 {
    let lum = img.to_luminance();
    let k = Kernel2D::new(3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
        .expect("static kernel");
    let resp = convolve_lum(&lum, &k);
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn convolve_lum(lum: &Image, k: &Kernel2D) -> Vec<f64> {
    super::convolve2d(lum, k, Border::Replicate)
        .expect("odd kernel")
        .data()
        .to_vec()
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - r;
            let dx = j as f64 - r;
            w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    if a.space() != b.space() {
        return Err(Error::WrongColorSpace { expected: a.space().name(), got: b.space().name() });
    }
    Ok(())
}
