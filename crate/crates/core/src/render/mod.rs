//! Software Gaussian-splat rasterizer.
//!
//! Gaussians are projected to screen-space ellipses (EWA), sorted globally
//! by camera depth and alpha-composited front to back. The tiled path and
//! the naive per-pixel path share one compositing routine and therefore
//! produce bit-identical images. Gradients are provided with respect to
//! per-Gaussian colors and opacity logits only.

mod backward;
mod raster;
pub mod ops;

use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Extrinsics, Intrinsics};
use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::scene::{covariance, sh_basis, sh_eval_basis, Gaussian, GaussianScene};

pub use backward::rasterize_backward;
pub use raster::{first_hit_depth, rasterize, rasterize_naive, rasterize_retain, Contribution, Contributions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Added to the diagonal of every 2D covariance (pixels²).
    pub cov_floor: f64,
    /// Upper bound on per-splat alpha.
    pub alpha_clip: f64,
    /// Gaussians with camera depth at or below this are culled.
    pub near: f64,
    /// Splats are evaluated inside their `support_sigma`-σ ellipse only.
    pub support_sigma: f64,
    pub tile_size: usize,
    pub background: [f64; 3],
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_clip > 0.0 && self.alpha_clip <= 1.0) {
            return Err(contract_err!("alpha clip must lie in (0, 1], got {}", self.alpha_clip));
        }
        if !(self.cov_floor >= 0.0) || !(self.support_sigma > 0.0) || !(self.near >= 0.0) {
            return Err(contract_err!("invalid render config {self:?}"));
        }
        if self.tile_size == 0 {
            return Err(contract_err!("tile size must be at least 1"));
        }
        Ok(())
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            cov_floor: 0.3,
            alpha_clip: 0.999,
            near: 0.01,
            support_sigma: 3.0,
            tile_size: 16,
            background: [0.0; 3],
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// `[xx, xy, yy]` of the regularized 2D covariance.
    pub cov2d: [f64; 3],
    /// `[xx, xy, yy]` of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the support ellipse,
    /// clipped to the image.
    pub bbox: [usize; 4],
}

impl Splat2D {
    /// Squared Mahalanobis distance of pixel `(x, y)` from the mean.
    #[inline]
    pub fn mahalanobis2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Direction from the camera center to the Gaussian (unit length).
pub fn view_direction(g: &Gaussian, e: &Extrinsics) -> Vector3<f64> {
    let d = g.position - e.center();
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Vector3::z()
    }
}

/// Per-Gaussian SH basis along the view rays, `N×25` row-major.
pub fn view_basis(scene: &GaussianScene, e: &Extrinsics) -> Vec<f64> {
    scene
        .gaussians
        .iter()
        .flat_map(|g| sh_basis(&view_direction(g, e)))
        .collect()
}

/// Raw SH colors of every Gaussian as seen from camera `e`.
pub fn view_colors(scene: &GaussianScene, e: &Extrinsics) -> Vec<[f64; 3]> {
    scene
        .gaussians
        .iter()
        .map(|g| sh_eval_basis(&g.sh, &sh_basis(&view_direction(g, e))))
        .collect()
}

/// Camera-space 2D covariance before the floor: `J·W·Σ·Wᵀ·Jᵀ`.
pub fn projected_covariance(
    cov3d: &Matrix3<f64>,
    cam: &Vector3<f64>,
    k: &Intrinsics,
    rotation: &Matrix3<f64>,
) -> [f64; 3] {
    let (x, y, z) = (cam.x, cam.y, cam.z);
    let j = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let t = j * rotation;
    let c = t * cov3d * t.transpose();
    [c[(0, 0)], 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)]]
}

/// Projects one Gaussian; `None` means culled.
pub fn project_gaussian(
    g: &Gaussian,
    index: usize,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Option<Splat2D> {
    let cam = e.to_camera(&g.position);
    if cam.z <= cfg.near {
        return None;
    }
    let mean2d = [k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy];
    let raw = projected_covariance(&covariance(g), &cam, k, e.rotation());
    let cov2d = [raw[0] + cfg.cov_floor, raw[1], raw[2] + cfg.cov_floor];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let rx = cfg.support_sigma * cov2d[0].sqrt();
    let ry = cfg.support_sigma * cov2d[2].sqrt();
    let (w, h) = (k.width as f64, k.height as f64);
    if mean2d[0] + rx < 0.0 || mean2d[0] - rx > w - 1.0 || mean2d[1] + ry < 0.0 || mean2d[1] - ry > h - 1.0 {
        return None;
    }
    // one pixel of margin keeps the bounds conservative under rounding
    let lo = |c: f64, r: f64| ((c - r).floor() - 1.0).max(0.0) as usize;
    let hi = |c: f64, r: f64, n: f64| ((c + r).ceil() + 1.0).min(n - 1.0) as usize;
    let dir = view_direction(g, e);
    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: cam.z,
        color: sh_eval_basis(&g.sh, &sh_basis(&dir)),
        opacity: g.opacity(),
        source_index: index,
        bbox: [lo(mean2d[0], rx), lo(mean2d[1], ry), hi(mean2d[0], rx, w), hi(mean2d[1], ry, h)],
    })
}

/// Result of a rasterization.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated opacity `1 − T_final` per pixel.
    pub alpha: Vec<f64>,
    pub contrib: Option<Contributions>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}
