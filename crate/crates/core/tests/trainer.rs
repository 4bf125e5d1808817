mod common;

use std::path::Path;
use std::sync::Arc;

use wildsplat::metrics::psnr;
use wildsplat::numerics::{Checkpoint, Tensor};
use wildsplat::render::rasterize;
use wildsplat::scenegen::{build_dataset, Dataset, DatasetConfig, SceneConfig};
use wildsplat::trainer::{
    load_state, optimizer_step, pick_views, prepare_stage, register_scene, run_curriculum, AdamConfig, Moments, RegisterConfig,
    RunOptions, StageConfig, TrainConfig, TrainState,
};

fn dataset(root: &Path, lightings: usize, occlude: bool, size: usize) -> Dataset {
    let cfg = DatasetConfig {
        lightings_per_scene: lightings,
        occlude,
        seed: 3,
        scene: SceneConfig {
            image_size: size,
            n_views: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    build_dataset(root, &cfg).unwrap();
    Dataset::open(root).unwrap()
}

fn config(root: &Path, iterations: usize) -> TrainConfig {
    TrainConfig {
        seed: 5,
        stages: vec![StageConfig {
            stage: 1,
            dataset: root.to_path_buf(),
            iterations,
            ..Default::default()
        }],
        views_per_step: 2,
        log_every: 1000,
        ..Default::default()
    }
}

fn quiet() -> RunOptions {
    RunOptions {
        skip_eval: true,
        ..Default::default()
    }
}

#[test]
fn adam_first_step_closed_form() {
    let cfg = AdamConfig::default();
    let mut p = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let g = Tensor::matrix(1, 3, vec![0.3, -4.0, 0.0]).unwrap();
    let mut m = Moments::zeros(&[1, 3]);
    optimizer_step(&mut p, &g, &mut m, 0.1, &cfg).unwrap();
    // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
    let expect = [1.0 - 0.1 * 0.3 / (0.3 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 0.5];
    for (a, b) in p.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
    assert_eq!(m.step, 1);
}

#[test]
fn adam_zero_gradients_leave_parameters_alone() {
    let mut p = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let before = p.clone();
    let mut m = Moments::zeros(&[2, 2]);
    for _ in 0..5 {
        optimizer_step(&mut p, &Tensor::zeros(&[2, 2]), &mut m, 0.5, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_rejects_bad_gradients() {
    let mut p = Tensor::zeros(&[1, 2]);
    let mut m = Moments::zeros(&[1, 2]);
    let cfg = AdamConfig::default();
    assert!(optimizer_step(&mut p, &Tensor::zeros(&[2, 1]), &mut m, 0.1, &cfg).is_err());
    let nan = Tensor::matrix(1, 2, vec![f64::NAN, 0.0]).unwrap();
    assert!(optimizer_step(&mut p, &nan, &mut m, 0.1, &cfg).is_err());
    assert_eq!(m.step, 0);
}

#[test]
fn config_validation() {
    let root = Path::new("/nonexistent");
    assert!(config(root, 10).validate().is_ok());
    let mut c = config(root, 0);
    assert!(c.validate().is_err());
    c = config(root, 10);
    c.stages[0].stage = 3;
    assert!(c.validate().is_err());
    c.stages[0].occlusion = true;
    assert!(c.validate().is_ok());
    c = config(root, 10);
    c.stages.clear();
    assert!(c.validate().is_err());
    c = config(root, 10);
    c.relight_augment = 1.5;
    assert!(c.validate().is_err());
    c = config(root, 10);
    c.cross_scene_codes = -0.1;
    assert!(c.validate().is_err());
    c = config(root, 10);
    c.stages[0].lr_final_fraction = 0.0;
    assert!(c.validate().is_err());
    c = config(root, 10);
    c.stages.push(StageConfig {
        stage: 1,
        ..Default::default()
    });
    c.stages[0].stage = 2;
    assert!(c.validate().is_err());
    assert!(run_curriculum(&config(root, 3), &quiet()).is_err());
}

#[test]
fn curriculum_layout() {
    let c = TrainConfig::curriculum("a".into(), "b".into(), "c".into(), 10);
    let its: Vec<_> = c.stages.iter().map(|s| (s.stage, s.iterations, s.occlusion)).collect();
    assert_eq!(its, vec![(1, 10, false), (2, 10, false), (3, 20, true)]);
    let flat = c.without_curriculum();
    assert_eq!(flat.stages.len(), 1);
    assert_eq!(flat.stages[0].iterations, 40);
    assert_eq!(flat.stages[0].stage, 3);
    assert_eq!(flat.total_iterations(), c.total_iterations());
}

#[test]
fn learning_rate_schedule() {
    let s = StageConfig {
        iterations: 100,
        lr_final_fraction: 0.2,
        ..Default::default()
    };
    assert_eq!(s.lr_scale(0), 1.0);
    assert!((s.lr_scale(100) - 0.2).abs() < 1e-15);
    assert!((s.lr_scale(50) - 0.6).abs() < 1e-12);
    assert!((1..=100).all(|t| s.lr_scale(t) <= s.lr_scale(t - 1)));
}

#[test]
fn registration_is_bounded_and_close_to_the_canonical_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 3, false, 32);
    let cfg = RegisterConfig {
        voxel_size: 0.2,
        scale_factor: 0.3,
    };
    let g = register_scene(&data, 0, &[0, 1, 2], &[0, 1], &cfg).unwrap();
    let valid: usize = (0..3).map(|v| data.depth(0, v).unwrap().valid_count()).sum();
    assert!(!g.is_empty() && g.len() <= valid);
    g.validate().unwrap();
    let cams = data.cameras(0).unwrap();
    for v in 0..4 {
        let out = rasterize(&g, None, &cams[v].intrinsics, &cams[v].extrinsics, &Default::default()).unwrap();
        let p = psnr(&out.image, &data.identity_image(0, v).unwrap(), None).unwrap();
        assert!(p >= 18.0, "view {v}: {p} dB");
    }
    assert!(register_scene(&data, 0, &[], &[0], &cfg).is_err());
    assert_eq!(register_scene(&data, 0, &[0, 1, 2], &[0, 1], &cfg).unwrap(), g);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root, 2, false, 16);
    let cfg = config(&root, 6);
    let a = run_curriculum(&cfg, &quiet()).unwrap();
    let b = run_curriculum(&cfg, &quiet()).unwrap();
    let (ca, cb) = (a.state.to_checkpoint().to_bytes(), b.state.to_checkpoint().to_bytes());
    assert!(ca == cb);
    assert_eq!(common::bits(&a.losses), common::bits(&b.losses));
    let back = TrainState::from_checkpoint(&Checkpoint::from_bytes(&ca).unwrap()).unwrap();
    assert_eq!(back, a.state);
    let mut other = cfg.clone();
    other.seed = 6;
    assert_ne!(run_curriculum(&other, &quiet()).unwrap().losses, a.losses);
}

#[test]
fn resume_reproduces_the_loss_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root, 2, false, 16);
    let mut cfg = config(&root, 4);
    cfg.stages.push(StageConfig {
        stage: 2,
        dataset: root.clone(),
        iterations: 4,
        ..Default::default()
    });
    let out = dir.path().join("run");
    let full = run_curriculum(
        &cfg,
        &RunOptions {
            out_dir: Some(out.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(full.losses.len(), 8);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let mid = load_state(&out.join("stage1.wskt")).unwrap();
    assert_eq!(mid.iteration, 4);
    let resumed = run_curriculum(
        &cfg,
        &RunOptions {
            resume: Some(mid),
            skip_eval: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(common::bits(&resumed.losses), common::bits(&full.losses[4..]));
    assert!(resumed.state.to_checkpoint().to_bytes() == full.state.to_checkpoint().to_bytes());
}

#[test]
fn geometry_stays_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let data = dataset(&root, 2, false, 16);
    let cfg = config(&root, 5);
    let trained = run_curriculum(&cfg, &quiet()).unwrap().state;
    let mut fresh = TrainState::new(cfg.seed, cfg.adapter_mode, true);
    prepare_stage(&mut fresh, &data, &cfg, false).unwrap();
    for (id, p) in &fresh.scenes {
        let t = trained.scene(id).unwrap();
        assert_eq!(*t.geometry, *p.geometry);
        assert_ne!(t.table, p.table);
        assert!(Arc::strong_count(&t.geometry) >= 1);
    }
}

#[test]
fn stage_one_loss_drops_below_a_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root, 2, false, 16);
    let cfg = config(&root, 200);
    let out = run_curriculum(&cfg, &quiet()).unwrap();
    let first = out.losses[0];
    let last = out.losses[190..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.25 * first, "{first} -> {last}");
}

#[test]
fn plain_color_fitting_is_monotone_over_windows() {
    // One training lighting, no masks, no Sobel term, no adapter.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    dataset(&root, 2, false, 16);
    let mut cfg = config(&root, 200);
    cfg.ablate.no_adapter = true;
    cfg.relight_augment = 0.0;
    cfg.views_per_step = 3;
    cfg.stages[0].loss.lambda = 0.0;
    let out = run_curriculum(&cfg, &quiet()).unwrap();
    let windows: Vec<f64> = out.losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "{windows:?}");
    }
}

#[test]
fn light_code_references_come_from_other_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let cfg = DatasetConfig {
        n_scenes: 3,
        seed: 3,
        scene: SceneConfig {
            image_size: 12,
            n_views: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    build_dataset(&root, &cfg).unwrap();
    let data = Dataset::open(&root).unwrap();
    let train = config(&root, 1);
    let mut state = TrainState::new(0, Default::default(), true);
    let scenes = prepare_stage(&mut state, &data, &train, false).unwrap();
    let mut r = common::rng(8);
    let mut seen = 0;
    for k in 0..3 {
        for _ in 0..50 {
            for p in pick_views(&scenes, k, 3, 0.0, 0.5, &mut r) {
                assert!(scenes[k].train_views.contains(&p.view) && scenes[k].train_lightings.contains(&p.lighting));
                if let Some((s, v)) = p.reference {
                    assert_ne!(s, k);
                    assert!(scenes[s].train_views.contains(&v));
                    seen += 1;
                }
            }
        }
    }
    assert!(seen > 100, "{seen}");
    // A single scene, or probability zero, never borrows a code.
    assert!(pick_views(&scenes[..1], 0, 3, 0.0, 1.0, &mut r).iter().all(|p| p.reference.is_none()));
    assert!(pick_views(&scenes, 1, 3, 0.0, 0.0, &mut r).iter().all(|p| p.reference.is_none()));
}
