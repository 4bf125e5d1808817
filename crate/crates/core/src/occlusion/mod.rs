//! Transient masks, synthetic occluders and the masked reconstruction loss.

mod loss;
mod sprites;

use std::path::Path;

use rand::Rng;

use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::rng::{stream_rng, STREAM_OCCLUDER};

pub use loss::{masked_loss, sobel_term, LossConfig, Normalization, SOBEL_EPS};
pub use sprites::{default_bank, load_bank, OccluderSprite};

pub const MIN_OCCLUDERS: usize = 2;
pub const MAX_OCCLUDERS: usize = 10;
/// Sprite height as a fraction of image height.
pub const OCCLUDER_HEIGHT_RANGE: (f64, f64) = (0.1, 0.3);
/// Sprite alpha above which a pixel counts as transient.
pub const MASK_ALPHA_THRESHOLD: f64 = 0.5;
const PLACEMENT_RETRIES: usize = 8;

/// Binary per-pixel transient map, `true` = transient. Visibility is the
/// complement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransientMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl TransientMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(contract_err!("mask {width}x{height} with {} values", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn all_static(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn popcount(&self) -> usize {
        self.data.iter().filter(|&&s| s).count()
    }

    /// `M = 1 − S` per pixel.
    pub fn visibility(&self) -> Vec<f64> {
        self.data.iter().map(|&s| if s { 0.0 } else { 1.0 }).collect()
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(contract_err!(
                "mask is {}x{}, image is {width}x{height}",
                self.width,
                self.height
            ));
        }
        Ok(())
    }

    pub fn union(&self, other: &TransientMask) -> Result<TransientMask> {
        other.check_size(self.width, self.height)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        TransientMask::new(self.width, self.height, data)
    }

    /// 8-bit grayscale PNG, 255 transient and 0 static.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&s| if s { 255 } else { 0 }).collect();
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, image::ColorType::L8)?;
        Ok(())
    }

    /// Reads a mask PNG; a pixel is transient when its luma is ≥ 128.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.pixels().map(|p| p.0[0] >= 128).collect())
    }
}

/// Where one sprite landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub sprite: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug)]
pub struct Occluded {
    pub image: Image,
    pub mask: TransientMask,
    /// Number of sprites drawn, in `[2, 10]`.
    pub sampled: usize,
    /// Sprites actually pasted; a sprite that never fits is skipped.
    pub placements: Vec<Placement>,
}

/// Pastes 2 to 10 random sprites into the lower half of `image`.
pub fn composite_occluders(image: &Image, bank: &[OccluderSprite], seed: u64) -> Result<Occluded> {
    if bank.is_empty() {
        return Err(contract_err!("occluder bank is empty"));
    }
    let (w, h) = (image.width(), image.height());
    let top = h.div_ceil(2);
    let mut rng = stream_rng(seed, STREAM_OCCLUDER);
    let sampled = rng.gen_range(MIN_OCCLUDERS..=MAX_OCCLUDERS);
    let mut out = image.clone();
    let mut mask = TransientMask::all_static(w, h);
    let mut placements = Vec::with_capacity(sampled);
    for _ in 0..sampled {
        let sprite = rng.gen_range(0..bank.len());
        let s = &bank[sprite];
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let frac = rng.gen_range(OCCLUDER_HEIGHT_RANGE.0..=OCCLUDER_HEIGHT_RANGE.1);
            let sh = ((frac * h as f64).round() as usize).max(1);
            let sw = ((sh as f64 * s.width() as f64 / s.height() as f64).round() as usize).max(1);
            if top + sh > h || sw > w {
                continue;
            }
            let x0 = rng.gen_range(0..=w - sw);
            let y0 = rng.gen_range(top..=h - sh);
            placed = Some(Placement {
                sprite,
                x0,
                y0,
                width: sw,
                height: sh,
            });
            break;
        }
        let Some(p) = placed else { continue };
        for y in 0..p.height {
            for x in 0..p.width {
                let rgba = s.sample_nearest(x, y, p.width, p.height);
                let a = rgba[3];
                if a <= 0.0 {
                    continue;
                }
                let (px, py) = (p.x0 + x, p.y0 + y);
                let under = out.pixel(px, py);
                let over = [0, 1, 2].map(|c| rgba[c] * a + under[c] * (1.0 - a));
                out.set_pixel(px, py, over);
                if a > MASK_ALPHA_THRESHOLD {
                    mask.data[py * w + px] = true;
                }
            }
        }
        placements.push(p);
    }
    Ok(Occluded {
        image: out,
        mask,
        sampled,
        placements,
    })
}
