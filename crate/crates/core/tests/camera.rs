mod common;

use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use wildsplat::camera::{
    load_cameras, project, save_cameras, unproject, unproject_pixel, Camera, CameraFile, DepthMap, Extrinsics,
    Intrinsics,
};

fn extrinsics(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Extrinsics {
    let axis = Vector3::from(axis);
    let r = if axis.norm() < 1e-9 {
        Matrix3::identity()
    } else {
        *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    };
    Extrinsics::new(r, Vector3::from(t)).unwrap()
}

proptest! {
    #[test]
    fn project_unproject_round_trip(
        u in 0.0..63.0f64, v in 0.0..47.0f64, depth in 0.1..50.0f64,
        axis in prop::array::uniform3(-1.0..1.0f64), angle in -3.0..3.0f64,
        t in prop::array::uniform3(-5.0..5.0f64),
    ) {
        let k = Intrinsics::new(70.0, 65.0, 31.5, 23.5, 64, 48).unwrap();
        let e = extrinsics(axis, angle, t);
        let p = unproject_pixel(u, v, depth, &k, &e);
        let (u2, v2, d2) = project(&p, &k, &e).unwrap();
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        prop_assert!((depth - d2).abs() < 1e-9 * depth.max(1.0));
    }

    #[test]
    fn projection_invariant_under_rigid_motion(
        p in prop::array::uniform3(-1.0..1.0f64),
        axis in prop::array::uniform3(-1.0..1.0f64), angle in -3.0..3.0f64,
        t in prop::array::uniform3(-3.0..3.0f64),
    ) {
        // Moving the world by (Q, s) and the camera by the inverse leaves pixels unchanged.
        let k = Intrinsics::new(50.0, 50.0, 16.0, 16.0, 32, 32).unwrap();
        let e = Extrinsics::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 4.0)).unwrap();
        let motion = extrinsics(axis, angle, t);
        let q = *motion.rotation();
        let s = *motion.translation();
        let point = Vector3::from(p);
        let moved = q * point + s;
        let e2 = e.compose_inverse(&q, &s).unwrap();
        let a = project(&point, &k, &e).unwrap();
        let b = project(&moved, &k, &e2).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9 && (a.2 - b.2).abs() < 1e-9);
    }
}

#[test]
fn points_behind_the_camera_are_rejected() {
    let k = Intrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
    assert!(project(&Vector3::new(0.0, 0.0, -1.0), &k, &Extrinsics::identity()).is_err());
    assert!(project(&Vector3::new(0.0, 0.0, 0.0), &k, &Extrinsics::identity()).is_err());
}

#[test]
fn non_orthonormal_rotation_is_rejected() {
    let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(Extrinsics::new(m, Vector3::zeros()).is_err());
    let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    assert!(Extrinsics::new(reflection, Vector3::zeros()).is_err());
}

#[test]
fn camera_center_maps_to_origin() {
    let e = Extrinsics::look_at(Vector3::new(3.0, 2.0, -4.0), Vector3::zeros(), Vector3::y()).unwrap();
    assert!(e.to_camera(&e.center()).norm() < 1e-12);
    let forward = e.to_camera(&Vector3::zeros());
    assert!(forward.x.abs() < 1e-12 && forward.y.abs() < 1e-12 && forward.z > 0.0);
}

#[test]
fn depth_unprojection_counts_valid_pixels_and_checks_size() {
    let k = Intrinsics::new(4.0, 4.0, 1.5, 1.5, 4, 4).unwrap();
    let mut valid = vec![false; 16];
    valid[5] = true;
    let mut values = vec![0.0; 16];
    values[5] = 2.0;
    let depth = DepthMap::new(4, 4, values, valid).unwrap();
    let pts = unproject(&depth, &k, &Extrinsics::identity()).unwrap();
    assert_eq!(pts.len(), 1);
    assert!((pts[0].z - 2.0).abs() < 1e-15);
    let k_big = Intrinsics::new(4.0, 4.0, 1.5, 1.5, 5, 4).unwrap();
    assert!(unproject(&depth, &k_big, &Extrinsics::identity()).is_err());
}

#[test]
fn depth_map_bytes_round_trip() {
    let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
    let valid: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    let d = DepthMap::new(4, 3, values, valid).unwrap();
    let back = DepthMap::from_bytes(&d.to_bytes()).unwrap();
    assert_eq!(back, d);
    assert!(DepthMap::from_bytes(&d.to_bytes()[..10]).is_err());
}

#[test]
fn cameras_json_round_trip_and_convention_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cameras.json");
    let cams = vec![Camera {
        intrinsics: Intrinsics::new(30.0, 31.0, 15.5, 15.0, 32, 30).unwrap(),
        extrinsics: Extrinsics::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), Vector3::y()).unwrap(),
    }];
    save_cameras(&path, &cams).unwrap();
    assert_eq!(load_cameras(&path).unwrap(), cams);
    let mut file = CameraFile::from(&cams[0]);
    file.convention = "c2w".into();
    assert!(Camera::try_from(&file).is_err());
    let json = std::fs::read_to_string(&path).unwrap().replace("\"convention\"", "\"bogus\": 1, \"convention\"");
    std::fs::write(&path, json).unwrap();
    assert!(load_cameras(&path).is_err());
}
