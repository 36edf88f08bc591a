use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::image::{quantize_8bit, rgb_to_y};

/// `10 log10(peak^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if peak <= 0.0 {
        return Err(Error::Config(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>() / a.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Unnormalised 1-D Gaussian taps, centre at index 5.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    g
}

/// Gaussian-weighted local mean of one plane. Near the border the window is
/// cut off and renormalised over the pixels that exist.
fn blur(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let g = gaussian_taps();
    let r = SSIM_WINDOW / 2;
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, line_stride: usize| {
        let mut out = vec![0.0; src.len()];
        for l in 0..lines {
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(len - 1);
                for j in lo..=hi {
                    let k = g[j + r - i];
                    acc += k * src[l * line_stride + j * stride];
                    norm += k;
                }
                out[l * line_stride + i * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(x, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Mean SSIM map of two single planes with dynamic range `range`.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mu_a = blur(a, h, w);
    let mu_b = blur(b, h, w);
    let aa = blur(&prod(a, a), h, w);
    let bb = blur(&prod(b, b), h, w);
    let ab = blur(&prod(a, b), h, w);
    let mut total = 0.0;
    for i in 0..h * w {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / (h * w) as f64
}

/// SSIM of `[B, C, H, W]` images, averaged over every plane.
pub fn ssim<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, range: f64) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() || s.len() != 4 {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (h, w) = (s[2], s[3]);
    let (da, db) = (a.to_f64_vec(), b.to_f64_vec());
    let planes = s[0] * s[1];
    let total: f64 = (0..planes)
        .map(|p| ssim_plane(&da[p * h * w..(p + 1) * h * w], &db[p * h * w..(p + 1) * h * w], h, w, range))
        .sum();
    Ok(total / planes as f64)
}

/// How evaluation images are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricConvention {
    /// Quantise RGB to 8 bits, take luma on the 0-255 scale, peak 255.
    EightBit,
    /// Luma of the float images on the 0-1 scale, peak 1.
    Float,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScores {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM on the luma channel of two RGB images in `[0, 1]`.
pub fn y_scores<E: Scalar>(sr: &Tensor<E>, hr: &Tensor<E>, conv: MetricConvention) -> Result<ImageScores> {
    let (ys, yh, range) = match conv {
        MetricConvention::EightBit => {
            (rgb_to_y(&quantize_8bit(sr))?.map(|v| v * 255.0), rgb_to_y(&quantize_8bit(hr))?.map(|v| v * 255.0), 255.0)
        }
        MetricConvention::Float => (rgb_to_y(sr)?, rgb_to_y(hr)?, 1.0),
    };
    Ok(ImageScores { psnr: psnr(&ys, &yh, range)?, ssim: ssim(&ys, &yh, range)? })
}
