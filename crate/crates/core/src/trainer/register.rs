use nalgebra::Vector3;

use crate::camera::unproject_with_pixels;
use crate::error::{Error, Result};
use crate::scene::{logit, sh_from_rgb, voxel_merge, Gaussian, GaussianScene};
use crate::scenegen::Dataset;

/// Opacity given to every unprojected point.
pub const REGISTER_OPACITY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegisterConfig {
    pub voxel_size: f64,
    /// Point scale as a multiple of `max(pixel footprint, voxel size)`.
    pub scale_factor: f64,
}

/// Frozen geometry and initial canonical colors for one dataset scene.
///
/// Every valid depth pixel of `views` becomes an isotropic Gaussian whose
/// color is that pixel's mean over `lightings` (transient pixels excluded),
/// then points are voxel-merged. Since the merge averages SH with equal
/// weights here, each merged Gaussian evaluates to the mean color of its
/// source pixels.
pub fn register_scene(
    data: &Dataset,
    scene: usize,
    views: &[usize],
    lightings: &[usize],
    cfg: &RegisterConfig,
) -> Result<GaussianScene> {
    let cameras = data.cameras(scene)?;
    let id = data.manifest.scenes[scene].id.clone();
    let mut points = Vec::new();
    for &v in views {
        let cam = cameras
            .get(v)
            .ok_or_else(|| Error::Data(format!("scene {scene} has no camera {v}")))?;
        let depth = data.depth(scene, v)?;
        let images = lightings
            .iter()
            .map(|&l| Ok((data.image(scene, v, l)?, data.mask(scene, v, l)?)))
            .collect::<Result<Vec<_>>>()?;
        for ((x, y), p) in unproject_with_pixels(&depth, &cam.intrinsics, &cam.extrinsics)? {
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for (img, mask) in &images {
                if mask.as_ref().is_some_and(|m| m.get(x, y)) {
                    continue;
                }
                let px = img.pixel(x, y);
                (0..3).for_each(|c| sum[c] += px[c]);
                n += 1;
            }
            let rgb = if n == 0 { [0.5; 3] } else { sum.map(|s| s / n as f64) };
            let d = depth.get(x, y).expect("valid pixel");
            let footprint = d / cam.intrinsics.fx;
            let scale = cfg.scale_factor * footprint.max(cfg.voxel_size);
            points.push(Gaussian {
                position: p,
                opacity_logit: logit(REGISTER_OPACITY),
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: Vector3::repeat(scale.ln()),
                sh: sh_from_rgb(rgb),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!("scene {scene}: no valid depth pixels to register")));
    }
    voxel_merge(&GaussianScene::new(id, points), cfg.voxel_size)
}
