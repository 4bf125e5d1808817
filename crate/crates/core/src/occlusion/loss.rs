use serde::{Deserialize, Serialize};

use super::TransientMask;
use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::numerics::{Tape, Tensor, Var};

/// Added under the square root of the Sobel magnitude so it stays smooth at 0.
pub const SOBEL_EPS: f64 = 1e-6;

/// How the masked MSE is averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by every pixel; masked pixels contribute zero.
    #[default]
    AllPixels,
    /// Divide by visible pixels only.
    VisibleOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the Sobel structural term.
    pub lambda: f64,
    pub normalization: Normalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            normalization: Normalization::AllPixels,
        }
    }
}

/// `MSE(I⊙M, Î⊙M) + λ·Sobel(I⊙M, Î⊙M)` where `rendered` is an `H×W×3`
/// node and `mask` marks transient pixels (`None` means all visible).
pub fn masked_loss(
    tape: &mut Tape,
    target: &Image,
    rendered: Var,
    mask: Option<&TransientMask>,
    cfg: &LossConfig,
) -> Result<Var> {
    let (w, h) = (target.width(), target.height());
    if tape.value(rendered).shape() != [h, w, 3] {
        return Err(contract_err!(
            "rendered image has shape {:?}, target is {h}x{w}x3",
            tape.value(rendered).shape()
        ));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(contract_err!("lambda must be finite and >= 0, got {}", cfg.lambda));
    }
    let visibility = match mask {
        Some(m) => {
            m.check_size(w, h)?;
            m.visibility()
        }
        None => vec![1.0; w * h],
    };
    let m3: Vec<f64> = visibility.iter().flat_map(|&v| [v; 3]).collect();
    let target_masked: Vec<f64> = target.data().iter().zip(&m3).map(|(t, m)| t * m).collect();
    let masked = tape.mul_const(rendered, Tensor::new(vec![h, w, 3], m3)?)?;
    let t = tape.constant(Tensor::new(vec![h, w, 3], target_masked.clone())?);
    let diff = tape.sub(masked, t)?;
    let sq = tape.square(diff);
    let mse = match cfg.normalization {
        Normalization::AllPixels => tape.mean(sq),
        Normalization::VisibleOnly => {
            let visible = visibility.iter().sum::<f64>();
            let total = tape.sum(sq);
            tape.scale(total, if visible > 0.0 { 1.0 / (3.0 * visible) } else { 0.0 })
        }
    };
    if cfg.lambda == 0.0 {
        return Ok(mse);
    }
    let target_masked = Image::new(w, h, target_masked)?;
    let sobel = sobel_term(tape, masked, &target_masked)?;
    let weighted = tape.scale(sobel, cfg.lambda);
    tape.add(mse, weighted)
}

/// Sobel responses at interior pixel `(x, y)` of channel `c`.
fn sobel_at(img: &[f64], w: usize, x: usize, y: usize, c: usize) -> (f64, f64) {
    let p = |dx: usize, dy: usize| img[((y + dy - 1) * w + (x + dx - 1)) * 3 + c];
    let gx = (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
    let gy = (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
    (gx, gy)
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Mean squared difference of per-channel Sobel magnitudes
/// `sqrt(gx² + gy² + ε)` over interior pixels. Zero for images thinner than 3.
pub fn sobel_term(tape: &mut Tape, rendered: Var, target: &Image) -> Result<Var> {
    let (w, h) = (target.width(), target.height());
    if w < 3 || h < 3 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let count = ((w - 2) * (h - 2) * 3) as f64;
    let img = tape.value(rendered).data().to_vec();
    let tgt = target.data();
    // Per interior sample: (gx, gy, magnitude difference, magnitude).
    let mut saved = Vec::with_capacity((w - 2) * (h - 2) * 3);
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let (gx, gy) = sobel_at(&img, w, x, y, c);
                let (tx, ty) = sobel_at(tgt, w, x, y, c);
                let mag = (gx * gx + gy * gy + SOBEL_EPS).sqrt();
                let diff = mag - (tx * tx + ty * ty + SOBEL_EPS).sqrt();
                total += diff * diff;
                saved.push([gx, gy, diff, mag]);
            }
        }
    }
    let value = Tensor::scalar(total / count);
    Ok(tape.custom(
        &[rendered],
        value,
        Box::new(move |g| {
            let g = g.item();
            let mut d = vec![0.0; w * h * 3];
            let mut i = 0;
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    for c in 0..3 {
                        let [gx, gy, diff, mag] = saved[i];
                        i += 1;
                        let k = g * 2.0 * diff / count / mag;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let coef = k * (gx * SOBEL_X[ky][kx] + gy * SOBEL_Y[ky][kx]);
                                d[((y + ky - 1) * w + (x + kx - 1)) * 3 + c] += coef;
                            }
                        }
                    }
                }
            }
            Ok(vec![Tensor::new(vec![h, w, 3], d)?])
        }),
    ))
}
