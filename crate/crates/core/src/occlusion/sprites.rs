use std::path::Path;

use crate::error::{contract_err, Error, Result};

/// Straight-alpha RGBA patch.
#[derive(Clone, Debug, PartialEq)]
pub struct OccluderSprite {
    width: usize,
    height: usize,
    rgba: Vec<f64>,
    pub label: String,
}

impl OccluderSprite {
    pub fn new(width: usize, height: usize, rgba: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if width == 0 || height == 0 || rgba.len() != width * height * 4 {
            return Err(contract_err!("sprite {label:?}: {width}x{height} with {} values", rgba.len()));
        }
        if rgba.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(contract_err!("sprite {label:?}: values outside [0,1]"));
        }
        if !rgba.chunks_exact(4).any(|p| p[3] > 0.0) {
            return Err(contract_err!("sprite {label:?} is fully transparent"));
        }
        Ok(Self {
            width,
            height,
            rgba,
            label,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self, x: usize, y: usize) -> [f64; 4] {
        let i = (y * self.width + x) * 4;
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    /// Nearest-neighbour lookup of pixel `(x, y)` of the sprite resized to `w×h`.
    pub fn sample_nearest(&self, x: usize, y: usize, w: usize, h: usize) -> [f64; 4] {
        let sx = (((x as f64 + 0.5) * self.width as f64 / w as f64) as usize).min(self.width - 1);
        let sy = (((y as f64 + 0.5) * self.height as f64 / h as f64) as usize).min(self.height - 1);
        self.rgba(sx, sy)
    }
}

/// Loads every `*.png` in `dir`, sorted by file name.
pub fn load_bank(dir: &Path) -> Result<Vec<OccluderSprite>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let img = image::open(p)?.to_rgba8();
            let (w, h) = img.dimensions();
            let rgba = img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            OccluderSprite::new(w as usize, h as usize, rgba, label)
        })
        .collect()
}

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.1],
    [0.1, 0.3, 0.8],
    [0.95, 0.8, 0.1],
    [0.2, 0.65, 0.25],
    [0.55, 0.2, 0.6],
    [0.95, 0.95, 0.95],
];

fn paint(w: usize, h: usize, color: [f64; 3], label: String, inside: impl Fn(f64, f64) -> bool) -> OccluderSprite {
    let mut rgba = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            if inside(u, v) {
                let shade = 0.8 + 0.2 * (1.0 - v);
                rgba.extend(color.map(|c| (c * shade).clamp(0.0, 1.0)));
                rgba.push(1.0);
            } else {
                rgba.extend([0.0; 4]);
            }
        }
    }
    OccluderSprite::new(w, h, rgba, label).expect("procedural sprite is valid")
}

fn ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2) <= 1.0
}

/// Twelve hard-edged silhouettes: four walkers, four vehicles, four bushes.
pub fn default_bank() -> Vec<OccluderSprite> {
    let mut bank = Vec::with_capacity(12);
    for i in 0..4 {
        let body = 0.16 + 0.04 * i as f64;
        bank.push(paint(16, 40, PALETTE[i], format!("person-{i}"), move |u, v| {
            ellipse(u, v, 0.5, 0.12, 0.22, 0.1)
                || (v > 0.22 && v < 0.65 && (u - 0.5).abs() < body + 0.1)
                || (v >= 0.65 && ((u - 0.35).abs() < 0.1 || (u - 0.65).abs() < 0.1))
        }));
    }
    for i in 0..4 {
        let cab = 0.3 + 0.08 * i as f64;
        bank.push(paint(48, 24, PALETTE[(i + 2) % 6], format!("car-{i}"), move |u, v| {
            (v > 0.35 && v < 0.8 && u > 0.04 && u < 0.96)
                || (v > 0.05 && v <= 0.35 && u > 0.5 - cab / 2.0 && u < 0.5 + cab / 2.0)
                || ellipse(u, v, 0.25, 0.82, 0.1, 0.18)
                || ellipse(u, v, 0.75, 0.82, 0.1, 0.18)
        }));
    }
    for i in 0..4 {
        let lobes = 2 + i;
        bank.push(paint(32, 24, PALETTE[(i + 3) % 6], format!("bush-{i}"), move |u, v| {
            (0..lobes).any(|k| {
                let cu = (k as f64 + 0.5) / lobes as f64;
                ellipse(u, v, cu, 0.6, 0.6 / lobes as f64 + 0.05, 0.4)
            })
        }));
    }
    bank
}
