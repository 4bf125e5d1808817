//! Procedural toy scenes, parametric relighting and on-disk datasets.
//!
//! Ground-truth images come from this crate's own rasterizer and are then
//! relit pointwise, so every lighting factor is known exactly.

mod dataset;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, DepthMap, Extrinsics, Intrinsics};
use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::render::{first_hit_depth, rasterize, RenderConfig};
use crate::rng::{stream_rng, STREAM_SCENE};
use crate::scene::{logit, sh_from_rgb, Gaussian, GaussianScene, SH_COEFFS};

pub use dataset::{build_dataset, Dataset, DatasetConfig, Manifest, SceneRecord, MANIFEST_VERSION};

/// Pointwise lighting: `clamp(exposure · tint ⊙ x^gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingSpec {
    pub tint: [f64; 3],
    pub exposure: f64,
    pub gamma: f64,
}

impl LightingSpec {
    pub const TINT_RANGE: (f64, f64) = (0.5, 1.5);
    pub const EXPOSURE_RANGE: (f64, f64) = (0.5, 1.5);
    pub const GAMMA_RANGE: (f64, f64) = (0.8, 1.25);

    pub fn identity() -> Self {
        Self {
            tint: [1.0; 3],
            exposure: 1.0,
            gamma: 1.0,
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        let (t0, t1) = Self::TINT_RANGE;
        let (e0, e1) = Self::EXPOSURE_RANGE;
        let (g0, g1) = Self::GAMMA_RANGE;
        Self {
            tint: [0; 3].map(|_| rng.gen_range(t0..=t1)),
            exposure: rng.gen_range(e0..=e1),
            gamma: rng.gen_range(g0..=g1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(self.tint.iter().all(|&t| ok(t)) && ok(self.exposure) && ok(self.gamma)) {
            return Err(contract_err!("lighting parameters must be finite and positive: {self:?}"));
        }
        Ok(())
    }

    fn apply(&self, x: f64, c: usize) -> f64 {
        (self.exposure * self.tint[c] * x.max(0.0).powf(self.gamma)).clamp(0.0, 1.0)
    }

    fn invert(&self, y: f64, c: usize) -> f64 {
        (y / (self.exposure * self.tint[c])).max(0.0).powf(1.0 / self.gamma)
    }
}

fn map_channels(image: &Image, f: impl Fn(f64, usize) -> f64) -> Image {
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(v, i % 3))
        .collect();
    Image::new(image.width(), image.height(), data).expect("same shape")
}

pub fn relight(image: &Image, spec: &LightingSpec) -> Image {
    map_channels(image, |v, c| spec.apply(v, c))
}

/// Inverse of [`relight`] for pixels that were not clipped.
pub fn unrelight(image: &Image, spec: &LightingSpec) -> Image {
    map_channels(image, |v, c| spec.invert(v, c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_views: usize,
    pub image_size: usize,
    pub fov_degrees: f64,
    pub orbit_radius: f64,
    pub elevation_degrees: f64,
    /// Azimuth span covered by the cameras.
    pub arc_degrees: f64,
    /// Alpha a splat must reach to define the depth of a pixel.
    pub depth_threshold: f64,
    pub render: RenderConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_views: 6,
            image_size: 32,
            fov_degrees: 45.0,
            orbit_radius: 5.5,
            elevation_degrees: 40.0,
            arc_degrees: 75.0,
            depth_threshold: 0.5,
            render: RenderConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 || self.image_size < 4 {
            return Err(crate::Error::Config("need at least one view and 4x4 images".into()));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 170.0 && self.orbit_radius > 0.0) {
            return Err(crate::Error::Config("bad field of view or orbit radius".into()));
        }
        if !(self.depth_threshold > 0.0 && self.depth_threshold <= 1.0) {
            return Err(crate::Error::Config("depth_threshold must be in (0, 1]".into()));
        }
        self.render.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyScene {
    pub gaussians: GaussianScene,
    pub cameras: Vec<Camera>,
    pub depths: Vec<DepthMap>,
    pub seed: u64,
}

impl ToyScene {
    /// Canonical-color render of view `v`.
    pub fn render_identity(&self, v: usize, cfg: &RenderConfig) -> Result<Image> {
        let cam = &self.cameras[v];
        Ok(rasterize(&self.gaussians, None, &cam.intrinsics, &cam.extrinsics, cfg)?.image)
    }
}

const GROUND_HALF: f64 = 2.0;
const GROUND_CELLS: usize = 12;

fn colored(rng: &mut impl Rng, base: [f64; 3], jitter: f64) -> [f64; crate::scene::SH_LEN] {
    let rgb = base.map(|c| (c + rng.gen_range(-jitter..=jitter)).clamp(0.05, 0.95));
    let mut sh = sh_from_rgb(rgb);
    // Mild view dependence on the degree-1 band.
    for c in 0..3 {
        for k in 1..4 {
            sh[c * SH_COEFFS + k] = rng.gen_range(-0.03..=0.03);
        }
    }
    sh
}

fn flat(position: Vector3<f64>, log_scale: Vector3<f64>, opacity: f64, sh: [f64; crate::scene::SH_LEN]) -> Gaussian {
    Gaussian {
        position,
        opacity_logit: logit(opacity),
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scale,
        sh,
    }
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.gen_range(0.15..0.85))
}

/// Ground plane, two boxes and one or two blobs, viewed by cameras on an
/// orbit arc around the origin. World +y is up.
pub fn make_scene(seed: u64, cfg: &SceneConfig) -> Result<ToyScene> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, STREAM_SCENE);
    let mut gaussians = Vec::new();

    let (ground_a, ground_b) = (random_color(&mut rng), random_color(&mut rng));
    let step = 2.0 * GROUND_HALF / GROUND_CELLS as f64;
    let ground_scale = Vector3::new((0.6 * step).ln(), 0.02f64.ln(), (0.6 * step).ln());
    for i in 0..GROUND_CELLS {
        for j in 0..GROUND_CELLS {
            let x = -GROUND_HALF + (i as f64 + 0.5) * step;
            let z = -GROUND_HALF + (j as f64 + 0.5) * step;
            let base = if (i / 3 + j / 3) % 2 == 0 { ground_a } else { ground_b };
            let sh = colored(&mut rng, base, 0.05);
            gaussians.push(flat(Vector3::new(x, 0.0, z), ground_scale, 0.98, sh));
        }
    }

    for _ in 0..2 {
        let size: Vector3<f64> = Vector3::new(rng.gen_range(0.4..0.8), rng.gen_range(0.4..0.9), rng.gen_range(0.4..0.8));
        let center = Vector3::new(rng.gen_range(-1.1..1.1), size.y / 2.0, rng.gen_range(-1.1..1.1));
        let base = random_color(&mut rng);
        // Top face plus four sides, 3×3 splats each, flattened along the normal.
        for axis in [1usize, 0, 2] {
            let signs: &[f64] = if axis == 1 { &[1.0] } else { &[-1.0, 1.0] };
            for &s in signs {
                let (u_axis, v_axis) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let mut log_scale = Vector3::zeros();
                log_scale[axis] = 0.015f64.ln();
                log_scale[u_axis] = (size[u_axis] / 4.0).ln();
                log_scale[v_axis] = (size[v_axis] / 4.0).ln();
                for a in 0..3 {
                    for b in 0..3 {
                        let mut p = center;
                        p[axis] += s * size[axis] / 2.0;
                        p[u_axis] += (a as f64 - 1.0) * size[u_axis] / 3.0;
                        p[v_axis] += (b as f64 - 1.0) * size[v_axis] / 3.0;
                        let shade = if axis == 1 { 1.0 } else { 0.85 };
                        let sh = colored(&mut rng, base.map(|c| c * shade), 0.04);
                        gaussians.push(flat(p, log_scale, 0.95, sh));
                    }
                }
            }
        }
    }

    let n_blobs = rng.gen_range(1..=2);
    for _ in 0..n_blobs {
        let radius = rng.gen_range(0.3..0.5);
        let center = Vector3::new(rng.gen_range(-1.2..1.2), radius, rng.gen_range(-1.2..1.2));
        let base = random_color(&mut rng);
        let n = 40;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let theta = golden * i as f64;
            let dir = Vector3::new(r * theta.cos(), y, r * theta.sin());
            let sh = colored(&mut rng, base, 0.08);
            gaussians.push(flat(center + dir * radius, Vector3::repeat((0.3 * radius).ln()), 0.95, sh));
        }
    }

    let scene = GaussianScene::new(format!("toy-{seed}"), gaussians);
    let intrinsics = Intrinsics::from_fov(cfg.fov_degrees, cfg.image_size, cfg.image_size)?;
    let start = rng.gen_range(0.0..360.0f64);
    let elevation = cfg.elevation_degrees.to_radians();
    let mut cameras = Vec::with_capacity(cfg.n_views);
    for v in 0..cfg.n_views {
        let frac = if cfg.n_views > 1 { v as f64 / (cfg.n_views - 1) as f64 } else { 0.0 };
        let azimuth = (start + frac * cfg.arc_degrees).to_radians();
        let eye = cfg.orbit_radius
            * Vector3::new(elevation.cos() * azimuth.cos(), elevation.sin(), elevation.cos() * azimuth.sin());
        let extrinsics = Extrinsics::look_at(eye, Vector3::zeros(), Vector3::y())?;
        cameras.push(Camera { intrinsics, extrinsics });
    }
    let depths = cameras
        .iter()
        .map(|c| first_hit_depth(&scene, &c.intrinsics, &c.extrinsics, &cfg.render, cfg.depth_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyScene {
        gaussians: scene,
        cameras,
        depths,
        seed,
    })
}
