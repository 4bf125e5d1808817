use super::RenderOutput;
use crate::error::{contract_err, Result};
use crate::scene::GaussianScene;

/// Gradients of a scalar loss with respect to each Gaussian's raw color and
/// opacity logit, given `dL/dC` for every pixel (`H×W×3`, row-major).
///
/// Color gradients are zero for channels the renderer clamped, and for
/// Gaussians that touch no pixel. Per-pixel contributions are reduced in
/// pixel order, so the result is deterministic.
pub fn rasterize_backward(
    grad_image: &[f64],
    output: &RenderOutput,
    scene: &GaussianScene,
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let contrib = output
        .contrib
        .as_ref()
        .ok_or_else(|| contract_err!("render was run without retaining contributions"))?;
    let n_pixels = contrib.width * contrib.height;
    if grad_image.len() != n_pixels * 3 {
        return Err(contract_err!(
            "image gradient has {} values, expected {}",
            grad_image.len(),
            n_pixels * 3
        ));
    }
    if contrib.colors.len() != scene.len() {
        return Err(contract_err!(
            "contribution record covers {} gaussians, scene has {}",
            contrib.colors.len(),
            scene.len()
        ));
    }
    let n = scene.len();
    let clamped: Vec<[f64; 3]> = contrib.colors.iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect();
    let passes: Vec<[bool; 3]> = contrib
        .colors
        .iter()
        .map(|c| c.map(|v| (0.0..=1.0).contains(&v)))
        .collect();
    let mut d_color = vec![[0.0; 3]; n];
    let mut d_logit = vec![0.0; n];
    let mut transmittance = Vec::new();
    for p in 0..n_pixels {
        let entries = contrib.pixel(p);
        if entries.is_empty() {
            continue;
        }
        let g = [grad_image[p * 3], grad_image[p * 3 + 1], grad_image[p * 3 + 2]];
        transmittance.clear();
        let mut t = 1.0;
        for e in entries {
            transmittance.push(t);
            t *= 1.0 - e.alpha;
        }
        // color seen behind splat i as if transmittance restarted at 1:
        // B_last = bg, B_{i-1} = c_i·α_i + (1 − α_i)·B_i
        let mut behind = contrib.background;
        for (e, &t_i) in entries.iter().zip(&transmittance).rev() {
            let idx = e.gaussian as usize;
            let c = clamped[idx];
            let w = e.alpha * t_i;
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                if passes[idx][ch] {
                    d_color[idx][ch] += g[ch] * w;
                }
                d_alpha += g[ch] * t_i * (c[ch] - behind[ch]);
                behind[ch] = c[ch] * e.alpha + (1.0 - e.alpha) * behind[ch];
            }
            let opacity = contrib.opacities[idx];
            if opacity * e.falloff < contrib.alpha_clip {
                d_logit[idx] += d_alpha * e.falloff * opacity * (1.0 - opacity);
            }
        }
    }
    Ok((d_color, d_logit))
}
