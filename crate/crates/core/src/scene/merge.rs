use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::{softplus, Gaussian, GaussianScene, SH_LEN};
use crate::error::{contract_err, Result};

/// Merges Gaussians that fall into the same voxel of edge `voxel_size`.
///
/// Each occupied voxel yields one Gaussian: opacity-weighted means of
/// position, log-scale and SH; the rotation of the most opaque member; and
/// opacity `1 − Π(1 − σᵢ)`. Output is sorted by voxel index and members are
/// reduced in a canonical order, so the result does not depend on the input
/// order.
pub fn voxel_merge(scene: &GaussianScene, voxel_size: f64) -> Result<GaussianScene> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(contract_err!("voxel size must be positive, got {voxel_size}"));
    }
    let mut buckets: BTreeMap<[i64; 3], Vec<&Gaussian>> = BTreeMap::new();
    for g in &scene.gaussians {
        let key = g.position.map(|v| (v / voxel_size).floor() as i64);
        buckets.entry([key.x, key.y, key.z]).or_default().push(g);
    }
    let gaussians = buckets
        .into_values()
        .map(|mut members| {
            members.sort_by(|a, b| canonical_order(a, b));
            merge_members(&members)
        })
        .collect();
    Ok(GaussianScene::new(scene.scene_id.clone(), gaussians))
}

fn canonical_order(a: &Gaussian, b: &Gaussian) -> Ordering {
    let key = |g: &Gaussian| {
        [g.position.x, g.position.y, g.position.z, g.opacity_logit]
    };
    key(a)
        .iter()
        .zip(key(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .chain(a.sh.iter().zip(b.sh.iter()).map(|(x, y)| x.total_cmp(y)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn merge_members(members: &[&Gaussian]) -> Gaussian {
    if let [single] = members {
        return (*single).clone();
    }
    let mut weight = 0.0;
    let mut position = Vector3::zeros();
    let mut log_scale = Vector3::zeros();
    let mut sh = [0.0; SH_LEN];
    // ln Π(1 − σᵢ) = −Σ softplus(logitᵢ)
    let mut log_transmittance = 0.0;
    let mut best = members[0];
    for g in members {
        let w = g.opacity();
        weight += w;
        position += g.position * w;
        log_scale += g.log_scale * w;
        for (acc, v) in sh.iter_mut().zip(&g.sh) {
            *acc += w * v;
        }
        log_transmittance -= softplus(g.opacity_logit);
        if g.opacity_logit > best.opacity_logit {
            best = g;
        }
    }
    // logit(1 − e^S) = ln(−expm1(S)) − S
    let opacity_logit = (-log_transmittance.exp_m1()).ln() - log_transmittance;
    Gaussian {
        position: position / weight,
        opacity_logit,
        rotation: best.rotation,
        log_scale: log_scale / weight,
        sh: sh.map(|v| v / weight),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sigmoid;

    fn g(x: f64, opacity: f64, r: f64) -> Gaussian {
        let mut sh = [0.0; SH_LEN];
        sh[0] = r;
        Gaussian::new(Vector3::new(x, 0.1, 0.1), opacity, 0.05, sh)
    }

    #[test]
    fn same_voxel_merges() {
        let scene = GaussianScene::new("s", vec![g(0.1, 0.5, 1.0), g(0.2, 0.5, 3.0)]);
        let m = voxel_merge(&scene, 1.0).unwrap();
        assert_eq!(m.len(), 1);
        let out = &m.gaussians[0];
        assert!((out.position.x - 0.15).abs() < 1e-15);
        assert!((out.sh[0] - 2.0).abs() < 1e-15);
        assert!((out.opacity() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn distinct_voxels_unchanged() {
        let scene = GaussianScene::new("s", vec![g(0.1, 0.5, 1.0), g(1.5, 0.7, 3.0)]);
        let m = voxel_merge(&scene, 1.0).unwrap();
        assert_eq!(m.gaussians, scene.gaussians);
    }

    #[test]
    fn many_opaque_members_stay_finite() {
        let members: Vec<_> = (0..40).map(|i| g(0.01 * i as f64, 0.9, 0.0)).collect();
        let m = voxel_merge(&GaussianScene::new("s", members), 1.0).unwrap();
        let l = m.gaussians[0].opacity_logit;
        assert!(l.is_finite() && l > 80.0, "{l}");
        assert_eq!(sigmoid(l), 1.0);
    }

    #[test]
    fn bad_voxel_size_and_empty_scene() {
        let empty = GaussianScene::new("e", vec![]);
        assert!(voxel_merge(&empty, 0.0).is_err());
        assert!(voxel_merge(&empty, 0.5).unwrap().is_empty());
    }

    #[test]
    fn highest_opacity_rotation_wins() {
        let mut a = g(0.1, 0.3, 0.0);
        let mut b = g(0.2, 0.8, 0.0);
        a.rotation = [0.0, 1.0, 0.0, 0.0];
        b.rotation = [0.0, 0.0, 1.0, 0.0];
        let m = voxel_merge(&GaussianScene::new("s", vec![a, b]), 1.0).unwrap();
        assert_eq!(m.gaussians[0].rotation, [0.0, 0.0, 1.0, 0.0]);
    }
}
