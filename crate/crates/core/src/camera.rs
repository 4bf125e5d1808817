//! Pinhole cameras (world-to-camera convention) and depth maps.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::numerics::ByteReader;

/// The only extrinsics convention this crate reads or writes.
pub const CONVENTION_W2C: &str = "w2c";
pub const DEPTH_MAGIC: &[u8; 4] = b"WSDM";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(contract_err!("focal lengths must be positive, got ({fx}, {fy})"));
        }
        if width == 0 || height == 0 {
            return Err(contract_err!("image size must be at least 1x1"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn from_fov(fov_x_degrees: f64, width: usize, height: usize) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x_degrees.to_radians()).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// World-to-camera rigid transform: `x_cam = R · x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(contract_err!(
                "rotation is not a proper rotation (|RᵀR − I| = {ortho:e}, det = {det})"
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(contract_err!("translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`; image +y points along −`up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * eye))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// `E · T⁻¹` for a rigid world transform `T(x) = Q·x + s`.
    pub fn compose_inverse(&self, q: &Matrix3<f64>, s: &Vector3<f64>) -> Result<Self> {
        let r = self.rotation * q.transpose();
        Self::new(r, self.translation - r * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

/// Projects a world point to `(u, v, depth)`.
pub fn project(point: &Vector3<f64>, k: &Intrinsics, e: &Extrinsics) -> Result<(f64, f64, f64)> {
    let c = e.to_camera(point);
    if c.z <= 0.0 {
        return Err(contract_err!("point is behind the camera (z = {})", c.z));
    }
    Ok((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
}

/// World point seen at pixel `(u, v)` with camera-space depth `depth`.
pub fn unproject_pixel(u: f64, v: f64, depth: f64, k: &Intrinsics, e: &Extrinsics) -> Vector3<f64> {
    let c = Vector3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth);
    e.to_world(&c)
}

/// Per-pixel camera-z depth with a validity flag. Pixel `(x, y)` sits at
/// image coordinates `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(contract_err!("depth map buffers do not match {width}x{height}"));
        }
        if let Some(i) = (0..values.len()).find(|&i| valid[i] && !(values[i] > 0.0 && values[i].is_finite())) {
            return Err(contract_err!("valid depth at pixel {i} is {}", values[i]));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.values.len() * 8 + self.valid.len() / 8 + 1);
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        // validity: row-major, least significant bit first
        for chunk in self.valid.chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |b, (i, &v)| b | ((v as u8) << i));
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != DEPTH_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "missing WSDM magic".into(),
            });
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let n = width * height;
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mask = r.take(n.div_ceil(8))?;
        let valid = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after depth map".into()));
        }
        Self::new(width, height, values, valid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Unprojects every valid pixel; invalid pixels are skipped.
pub fn unproject(depth: &DepthMap, k: &Intrinsics, e: &Extrinsics) -> Result<Vec<Vector3<f64>>> {
    Ok(unproject_with_pixels(depth, k, e)?.into_iter().map(|(_, p)| p).collect())
}

/// Like [`unproject`] but keeps the source pixel `(x, y)` of each point.
pub fn unproject_with_pixels(
    depth: &DepthMap,
    k: &Intrinsics,
    e: &Extrinsics,
) -> Result<Vec<((usize, usize), Vector3<f64>)>> {
    if depth.width != k.width || depth.height != k.height {
        return Err(contract_err!(
            "depth map is {}x{} but the camera is {}x{}",
            depth.width,
            depth.height,
            k.width,
            k.height
        ));
    }
    let mut points = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(d) = depth.get(x, y) {
                points.push(((x, y), unproject_pixel(x as f64, y as f64, d, k, e)));
            }
        }
    }
    Ok(points)
}

/// JSON form of a camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub convention: String,
}

impl From<&Camera> for CameraFile {
    fn from(c: &Camera) -> Self {
        let k = &c.intrinsics;
        let r = c.extrinsics.rotation();
        let t = c.extrinsics.translation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation,
            translation: [t.x, t.y, t.z],
            convention: CONVENTION_W2C.into(),
        }
    }
}

impl TryFrom<&CameraFile> for Camera {
    type Error = Error;

    fn try_from(f: &CameraFile) -> Result<Self> {
        if f.convention != CONVENTION_W2C {
            return Err(Error::Data(format!(
                "unsupported camera convention {:?} (expected \"w2c\")",
                f.convention
            )));
        }
        Ok(Camera {
            intrinsics: Intrinsics::new(f.fx, f.fy, f.cx, f.cy, f.width, f.height)?,
            extrinsics: Extrinsics::new(
                Matrix3::from_row_slice(&f.rotation),
                Vector3::from_row_slice(&f.translation),
            )?,
        })
    }
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let files: Vec<CameraFile> = cameras.iter().map(CameraFile::from).collect();
    let json = serde_json::to_string_pretty(&files)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let files: Vec<CameraFile> = serde_json::from_str(&text)?;
    files.iter().map(Camera::try_from).collect()
}
