//! PSNR and SSIM.
//!
//! Masked PSNR averages over the visible pixels only, whereas the training
//! loss averages over all pixels with masked ones contributing zero.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::occlusion::TransientMask;

/// Reported PSNR for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub n_pixels_evaluated: usize,
    pub mask_applied: bool,
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_size(b) {
        return Err(contract_err!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    Ok(())
}

/// PSNR (peak 1.0) over pixels where `mask` is static, or all pixels.
/// Values are capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, mask: Option<&TransientMask>) -> Result<f64> {
    check_pair(a, b)?;
    let (sum, count) = squared_error(a, b, mask)?;
    if count == 0 {
        return Err(crate::Error::Numeric("PSNR undefined: mask excludes every pixel".into()));
    }
    Ok(psnr_from_mse(sum / (3 * count) as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn squared_error(a: &Image, b: &Image, mask: Option<&TransientMask>) -> Result<(f64, usize)> {
    if let Some(m) = mask {
        m.check_size(a.width(), a.height())?;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (p, (pa, pb)) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| m.data()[p]) {
            continue;
        }
        count += 1;
        sum += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok((sum, count))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Valid-mode separable filtering of one `w×h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-windowed SSIM (11×11, σ 1.5, L 1), averaged over valid window
/// positions and the three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(contract_err!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let plane = |img: &Image, c: usize| -> Vec<f64> { img.data().chunks_exact(3).map(|p| p[c]).collect() };
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let (pa, pb) = (plane(a, c), plane(b, c));
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter_valid(&pa, w, h, &taps);
        let mu_b = filter_valid(&pb, w, h, &taps);
        let e_aa = filter_valid(&prod(&pa, &pa), w, h, &taps);
        let e_bb = filter_valid(&prod(&pb, &pb), w, h, &taps);
        let e_ab = filter_valid(&prod(&pa, &pb), w, h, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            total += ssim_value(ma, mb, e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of one window from its moments.
pub fn ssim_value(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// PSNR (optionally masked) and unmasked SSIM in one report.
pub fn evaluate(rendered: &Image, target: &Image, mask: Option<&TransientMask>) -> Result<MetricReport> {
    check_pair(rendered, target)?;
    let (_, count) = squared_error(rendered, target, mask)?;
    Ok(MetricReport {
        psnr: psnr(rendered, target, mask)?,
        ssim: ssim(rendered, target)?,
        n_pixels_evaluated: count,
        mask_applied: mask.is_some(),
    })
}
