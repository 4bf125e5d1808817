#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildsplat::camera::{Extrinsics, Intrinsics};
use wildsplat::scene::{normalize_quaternion, Gaussian, GaussianScene, SH_LEN};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random Gaussians in front of an identity camera looking down +z.
pub fn random_scene(n: usize, seed: u64) -> GaussianScene {
    let mut r = rng(seed);
    let gaussians = (0..n)
        .map(|_| {
            let z = r.gen_range(2.0..5.0);
            let mut sh = [0.0; SH_LEN];
            for (i, v) in sh.iter_mut().enumerate() {
                *v = if i % 25 == 0 { r.gen_range(-1.2..1.2) } else { r.gen_range(-0.15..0.15) };
            }
            Gaussian {
                position: Vector3::new(r.gen_range(-0.35..0.35) * z, r.gen_range(-0.35..0.35) * z, z),
                opacity_logit: r.gen_range(-1.5..2.5),
                rotation: normalize_quaternion([
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(-1.0..1.0),
                ]),
                log_scale: Vector3::new(
                    r.gen_range(-3.2..-1.0),
                    r.gen_range(-3.2..-1.0),
                    r.gen_range(-3.2..-1.0),
                ),
                sh,
            }
        })
        .collect();
    GaussianScene::new(format!("random-{seed}"), gaussians)
}

pub fn camera(size: usize) -> (Intrinsics, Extrinsics) {
    (
        Intrinsics::new(size as f64 * 1.1, size as f64 * 1.1, size as f64 / 2.0, size as f64 / 2.0, size, size)
            .unwrap(),
        Extrinsics::identity(),
    )
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
