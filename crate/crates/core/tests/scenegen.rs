mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use wildsplat::imaging::Image;
use wildsplat::render::{project_gaussian, RenderConfig};
use wildsplat::scenegen::{build_dataset, make_scene, relight, unrelight, Dataset, DatasetConfig, LightingSpec, SceneConfig};

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = common::rng(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| r.gen_range(0.02..0.98)).collect()).unwrap()
}

#[test]
fn relight_examples() {
    let img = random_image(5, 4, 1);
    assert_eq!(relight(&img, &LightingSpec::identity()), img);
    let half = LightingSpec {
        tint: [1.0; 3],
        exposure: 0.5,
        gamma: 1.0,
    };
    let out = relight(&Image::filled(3, 3, [1.0; 3]), &half);
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn relight_inverts_on_interior_pixels() {
    let mut r = common::rng(2);
    let img = random_image(16, 16, 3);
    for _ in 0..50 {
        let spec = LightingSpec::sample(&mut r);
        let out = relight(&img, &spec);
        let back = unrelight(&out, &spec);
        for (i, (&o, &b)) in out.data().iter().zip(back.data()).enumerate() {
            if o > 0.0 && o < 1.0 {
                assert!((b - img.data()[i]).abs() < 1e-9, "{spec:?}");
            }
        }
    }
}

#[test]
fn relight_is_monotone_and_commutes_with_crops() {
    let mut r = common::rng(4);
    let img = random_image(12, 10, 5);
    for _ in 0..20 {
        let spec = LightingSpec::sample(&mut r);
        let a = relight(&img.crop(2, 3, 6, 5).unwrap(), &spec);
        let b = relight(&img, &spec).crop(2, 3, 6, 5).unwrap();
        assert_eq!(a, b);
        let ramp = Image::new(16, 1, (0..48).map(|i| (i / 3) as f64 / 15.0).collect()).unwrap();
        let out = relight(&ramp, &spec);
        for c in 0..3 {
            for x in 1..16 {
                assert!(out.pixel(x, 0)[c] >= out.pixel(x - 1, 0)[c]);
            }
        }
    }
}

#[test]
fn lighting_specs_are_validated() {
    let mut bad = LightingSpec::identity();
    bad.gamma = 0.0;
    assert!(bad.validate().is_err());
    bad = LightingSpec::identity();
    bad.tint[1] = f64::NAN;
    assert!(bad.validate().is_err());
    assert!(LightingSpec::identity().validate().is_ok());
}

#[test]
fn scenes_are_deterministic_with_six_views() {
    let cfg = SceneConfig::default();
    let a = make_scene(11, &cfg).unwrap();
    let b = make_scene(11, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cameras.len(), 6);
    assert_eq!(a.depths.len(), 6);
    assert_ne!(make_scene(12, &cfg).unwrap().gaussians, a.gaussians);
    a.gaussians.validate().unwrap();
}

#[test]
fn depth_pixels_land_inside_a_gaussian_footprint() {
    let cfg = SceneConfig::default();
    let rc = RenderConfig::default();
    for seed in [0, 5] {
        let toy = make_scene(seed, &cfg).unwrap();
        for (cam, depth) in toy.cameras.iter().zip(&toy.depths) {
            let splats: Vec<_> = toy
                .gaussians
                .gaussians
                .iter()
                .enumerate()
                .filter_map(|(i, g)| project_gaussian(g, i, &cam.intrinsics, &cam.extrinsics, &rc))
                .collect();
            for y in 0..depth.height() {
                for x in 0..depth.width() {
                    let Some(d) = depth.get(x, y) else { continue };
                    let ok = splats
                        .iter()
                        .any(|s| (s.depth - d).abs() < 1e-12 && s.mahalanobis2(x as f64, y as f64) <= 9.0);
                    assert!(ok, "seed {seed}: pixel ({x},{y}) depth {d}");
                }
            }
        }
    }
}

#[test]
fn most_gaussians_are_visible_from_every_view() {
    let toy = make_scene(3, &SceneConfig::default()).unwrap();
    let rc = RenderConfig::default();
    for cam in &toy.cameras {
        let visible = toy
            .gaussians
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_gaussian(g, i, &cam.intrinsics, &cam.extrinsics, &rc))
            .filter(|s| {
                s.mean2d[0] >= 0.0
                    && s.mean2d[1] >= 0.0
                    && s.mean2d[0] < cam.intrinsics.width as f64
                    && s.mean2d[1] < cam.intrinsics.height as f64
            })
            .count();
        assert!(visible as f64 >= 0.8 * toy.gaussians.len() as f64, "{visible}");
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn small(occlude: bool) -> DatasetConfig {
    DatasetConfig {
        n_scenes: 2,
        lightings_per_scene: 2,
        occlude,
        seed: 9,
        scene: SceneConfig {
            n_views: 3,
            image_size: 24,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn dataset_replays_byte_identically_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    build_dataset(&a, &small(true)).unwrap();
    let manifest = Dataset::open(&a).unwrap().manifest;
    build_dataset(&b, &manifest.config).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);
    assert!(ta.contains_key("manifest.json"));
    assert!(ta.contains_key("scene_1/view_2/light_1.mask.png"));
    assert!(ta.contains_key("scene_0/cameras.json"));
    assert!(ta.contains_key("scene_0/view_0/depth.wsdm"));
}

#[test]
fn dataset_contents_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(false);
    let manifest = build_dataset(dir.path(), &cfg).unwrap();
    let data = Dataset::open(dir.path()).unwrap();
    assert_eq!(data.n_scenes(), 2);
    assert_eq!(data.n_views(), 3);
    assert!(!data.occluded());
    // Shared lightings by default.
    assert_eq!(manifest.scenes[0].lightings, manifest.scenes[1].lightings);
    for s in 0..2 {
        let toy = data.toy_scene(s).unwrap();
        assert_eq!(toy.gaussians, data.gt_scene(s).unwrap());
        assert_eq!(toy.cameras, data.cameras(s).unwrap());
        for v in 0..3 {
            assert_eq!(data.depth(s, v).unwrap(), toy.depths[v]);
            let identity = toy.render_identity(v, &cfg.scene.render).unwrap();
            let stored = data.identity_image(s, v).unwrap();
            assert_eq!(stored.to_rgb8(), identity.to_rgb8());
            for (l, spec) in manifest.scenes[s].lightings.iter().enumerate() {
                let img = data.image(s, v, l).unwrap();
                assert_eq!(img.to_rgb8(), relight(&identity, spec).to_rgb8());
                assert!(data.mask(s, v, l).unwrap().is_none());
            }
        }
    }
}

#[test]
fn occluded_datasets_carry_masks_and_clean_images() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset(dir.path(), &small(true)).unwrap();
    let data = Dataset::open(dir.path()).unwrap();
    assert!(data.occluded());
    let mut covered = 0;
    for v in 0..3 {
        for l in 0..2 {
            let mask = data.mask(0, v, l).unwrap().unwrap();
            let img = data.image(0, v, l).unwrap();
            let clean = data.clean_image(0, v, l).unwrap();
            covered += mask.popcount();
            for y in 0..12 {
                for x in 0..24 {
                    assert!(!mask.get(x, y));
                    assert_eq!(img.pixel(x, y), clean.pixel(x, y));
                }
            }
        }
    }
    assert!(covered > 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(false);
    cfg.lightings_per_scene = 1;
    assert!(build_dataset(dir.path(), &cfg).is_err());
    let mut cfg = small(false);
    cfg.n_scenes = 0;
    assert!(build_dataset(dir.path(), &cfg).is_err());
    assert!(Dataset::open(&dir.path().join("nope")).is_err());
}
