use rayon::prelude::*;

use super::{project_gaussian, RenderConfig, RenderOutput, Splat2D};
use crate::camera::{DepthMap, Extrinsics, Intrinsics};
use crate::error::{contract_err, numeric_err, Result};
use crate::imaging::Image;
use crate::scene::GaussianScene;

/// One splat's contribution to one pixel, in compositing order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index of the Gaussian in the scene.
    pub gaussian: u32,
    /// `exp(−½ dᵀ Σ⁻¹ d)` at the pixel.
    pub falloff: f64,
    /// Clipped alpha actually used.
    pub alpha: f64,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Contributions {
    pub width: usize,
    pub height: usize,
    /// Pixel `p` owns `entries[offsets[p]..offsets[p + 1]]`.
    pub offsets: Vec<usize>,
    pub entries: Vec<Contribution>,
    /// Raw (unclamped) colors per Gaussian.
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub background: [f64; 3],
    pub alpha_clip: f64,
}

impl Contributions {
    pub fn pixel(&self, p: usize) -> &[Contribution] {
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }
}

#[inline]
fn clamp01(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Projects, colors and depth-sorts the scene (ties broken by index).
fn prepare(
    scene: &GaussianScene,
    colors_override: Option<&[[f64; 3]]>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Result<(Vec<Splat2D>, Vec<[f64; 3]>)> {
    cfg.validate()?;
    if let Some(i) = scene.gaussians.iter().position(|g| !g.is_finite()) {
        return Err(numeric_err!("gaussian {i} has non-finite parameters"));
    }
    if let Some(colors) = colors_override {
        if colors.len() != scene.len() {
            return Err(contract_err!(
                "{} override colors for {} gaussians",
                colors.len(),
                scene.len()
            ));
        }
        if let Some(i) = colors.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
            return Err(numeric_err!("override color of gaussian {i} is not finite"));
        }
    }
    let mut colors = Vec::with_capacity(scene.len());
    let mut splats = Vec::with_capacity(scene.len());
    for (i, g) in scene.gaussians.iter().enumerate() {
        let projected = project_gaussian(g, i, k, e, cfg);
        let color = match (colors_override, &projected) {
            (Some(c), _) => c[i],
            (None, Some(s)) => s.color,
            (None, None) => [0.0; 3],
        };
        colors.push(color);
        if let Some(mut s) = projected {
            s.color = color;
            splats.push(s);
        }
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    Ok((splats, colors))
}

/// Front-to-back compositing of one pixel. Returns the color before the
/// background term and the final transmittance.
#[inline]
fn composite_pixel<'a>(
    x: usize,
    y: usize,
    splats: impl Iterator<Item = &'a Splat2D>,
    cfg: &RenderConfig,
    mut record: Option<&mut Vec<Contribution>>,
) -> ([f64; 3], f64) {
    let support2 = cfg.support_sigma * cfg.support_sigma;
    let (px, py) = (x as f64, y as f64);
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for s in splats {
        let m = s.mahalanobis2(px, py);
        if m > support2 {
            continue;
        }
        let falloff = (-0.5 * m).exp();
        let alpha = (s.opacity * falloff).min(cfg.alpha_clip);
        let c = clamp01(s.color);
        let w = alpha * t;
        for ch in 0..3 {
            color[ch] += c[ch] * w;
        }
        t *= 1.0 - alpha;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                gaussian: s.source_index as u32,
                falloff,
                alpha,
            });
        }
    }
    (color, t)
}

fn finish_pixel(image: &mut [f64], alpha: &mut [f64], p: usize, color: [f64; 3], t: f64, bg: [f64; 3]) {
    for ch in 0..3 {
        image[p * 3 + ch] = color[ch] + bg[ch] * t;
    }
    alpha[p] = 1.0 - t;
}

/// Per-tile lists of indices into the sorted splat array, each in sorted order.
fn tile_lists(splats: &[Splat2D], width: usize, height: usize, tile: usize) -> (usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bbox;
        for ty in y0 / tile..=y1 / tile {
            for tx in x0 / tile..=x1 / tile {
                lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    (tiles_x, lists)
}

struct TileResult {
    pixels: Vec<(usize, [f64; 3], f64)>,
    contrib: Vec<Vec<Contribution>>,
}

fn render_tiled(
    scene: &GaussianScene,
    colors_override: Option<&[[f64; 3]]>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
    retain: bool,
) -> Result<RenderOutput> {
    let (w, h, ts) = (k.width, k.height, cfg.tile_size);
    let (splats, colors) = prepare(scene, colors_override, k, e, cfg)?;
    let (tiles_x, lists) = tile_lists(&splats, w, h, ts);
    let results: Vec<TileResult> = lists
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let mut out = TileResult {
                pixels: Vec::with_capacity(ts * ts),
                contrib: Vec::new(),
            };
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let iter = list.iter().map(|&si| &splats[si as usize]);
                    let (c, t) = if retain {
                        let mut rec = Vec::new();
                        let r = composite_pixel(x, y, iter, cfg, Some(&mut rec));
                        out.contrib.push(rec);
                        r
                    } else {
                        composite_pixel(x, y, iter, cfg, None)
                    };
                    out.pixels.push((y * w + x, c, t));
                }
            }
            out
        })
        .collect();

    let mut image = vec![0.0; w * h * 3];
    let mut alpha = vec![0.0; w * h];
    let mut per_pixel: Vec<Vec<Contribution>> = if retain { vec![Vec::new(); w * h] } else { Vec::new() };
    for tile in results {
        let mut recorded = tile.contrib.into_iter();
        for &(p, c, t) in &tile.pixels {
            finish_pixel(&mut image, &mut alpha, p, c, t, cfg.background);
            if retain {
                per_pixel[p] = recorded.next().unwrap_or_default();
            }
        }
    }
    let contrib = retain.then(|| {
        let mut offsets = Vec::with_capacity(w * h + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for list in per_pixel {
            entries.extend(list);
            offsets.push(entries.len());
        }
        Contributions {
            width: w,
            height: h,
            offsets,
            entries,
            colors,
            opacities: scene.gaussians.iter().map(|g| g.opacity()).collect(),
            background: cfg.background,
            alpha_clip: cfg.alpha_clip,
        }
    });
    Ok(RenderOutput {
        image: Image::new(w, h, image)?,
        alpha,
        contrib,
    })
}

/// Tiled rasterization. `colors_override` replaces the SH colors.
pub fn rasterize(
    scene: &GaussianScene,
    colors_override: Option<&[[f64; 3]]>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    render_tiled(scene, colors_override, k, e, cfg, false)
}

/// Tiled rasterization that keeps the per-pixel contribution record needed
/// by [`rasterize_backward`](super::rasterize_backward).
pub fn rasterize_retain(
    scene: &GaussianScene,
    colors_override: Option<&[[f64; 3]]>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    render_tiled(scene, colors_override, k, e, cfg, true)
}

/// Reference path: every pixel walks the full global depth order.
pub fn rasterize_naive(
    scene: &GaussianScene,
    colors_override: Option<&[[f64; 3]]>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    let (w, h) = (k.width, k.height);
    let (splats, _) = prepare(scene, colors_override, k, e, cfg)?;
    let mut image = vec![0.0; w * h * 3];
    let mut alpha = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (c, t) = composite_pixel(x, y, splats.iter(), cfg, None);
            finish_pixel(&mut image, &mut alpha, y * w + x, c, t, cfg.background);
        }
    }
    Ok(RenderOutput {
        image: Image::new(w, h, image)?,
        alpha,
        contrib: None,
    })
}

/// Depth of the first splat (front to back) whose alpha reaches `threshold`
/// at each pixel; pixels without one are invalid.
pub fn first_hit_depth(
    scene: &GaussianScene,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
    threshold: f64,
) -> Result<DepthMap> {
    let (w, h) = (k.width, k.height);
    let (splats, _) = prepare(scene, None, k, e, cfg)?;
    let (tiles_x, lists) = tile_lists(&splats, w, h, cfg.tile_size);
    let ts = cfg.tile_size;
    let support2 = cfg.support_sigma * cfg.support_sigma;
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let list = &lists[(y / ts) * tiles_x + x / ts];
            let hit = list.iter().map(|&si| &splats[si as usize]).find(|s| {
                let m = s.mahalanobis2(x as f64, y as f64);
                m <= support2 && (s.opacity * (-0.5 * m).exp()).min(cfg.alpha_clip) >= threshold
            });
            if let Some(s) = hit {
                values[y * w + x] = s.depth;
                valid[y * w + x] = true;
            }
        }
    }
    DepthMap::new(w, h, values, valid)
}
