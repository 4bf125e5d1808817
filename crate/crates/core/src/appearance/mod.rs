//! Light encoder and appearance adapter.
//!
//! The encoder summarizes an image's global illumination as a
//! 16-dimensional light code. The adapter is a shared per-Gaussian MLP that
//! maps `[light code | canonical SH]` (91 values) to lighting-specific SH
//! coefficients (75 values). Only colors change; geometry is untouched.

mod adapter;
mod encoder;

use rand::Rng;

use crate::camera::Camera;
use crate::error::{contract_err, Result};
use crate::imaging::Image;
use crate::numerics::{Checkpoint, Tensor};
use crate::render::{rasterize, view_basis, RenderConfig, RenderOutput};
use crate::scene::{sh_eval_basis, GaussianScene, SH_COEFFS, SH_LEN};

pub use adapter::{adapt_colors, adapter_forward, AdapterMode, AdapterParams, AdapterVars, ADAPTER_WIDTHS};
pub use encoder::{
    encode_light, encoder_forward, image_to_tensor, EncoderParams, EncoderVars, ENCODER_CHANNELS,
    ENCODER_HEAD, ENCODER_INPUT_SIZE,
};

pub const LIGHT_CODE_DIM: usize = 16;

/// Per-image illumination latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightCode(pub [f64; LIGHT_CODE_DIM]);

impl LightCode {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; LIGHT_CODE_DIM] = values
            .try_into()
            .map_err(|_| contract_err!("light code needs {LIGHT_CODE_DIM} values, got {}", values.len()))?;
        if !arr.iter().all(|v| v.is_finite()) {
            return Err(crate::error::numeric_err!("light code is not finite"));
        }
        Ok(Self(arr))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(1, LIGHT_CODE_DIM, self.0.to_vec()).expect("fixed shape")
    }
}

/// Uniform Xavier/Glorot initialization, scaled by `gain`.
pub(crate) fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-a..=a)).collect()).expect("valid shape")
}

/// Reads tensors `names` from a checkpoint, checking each shape.
pub(crate) fn load_named(ckpt: &Checkpoint, names: &[String], shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
    names
        .iter()
        .zip(shapes)
        .map(|(name, shape)| {
            let t = ckpt.require(name)?;
            if t.shape() != shape.as_slice() {
                return Err(crate::Error::Data(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        })
        .collect()
}

/// Raw per-Gaussian RGB for an adapted `N×75` table seen from `camera`.
pub fn colors_from_table(scene: &GaussianScene, table: &Tensor, camera: &Camera) -> Result<Vec<[f64; 3]>> {
    let (n, cols) = table.dims2()?;
    if n != scene.len() || cols != SH_LEN {
        return Err(contract_err!("SH table {n}x{cols} for {} gaussians", scene.len()));
    }
    let basis = view_basis(scene, &camera.extrinsics);
    Ok(table
        .data()
        .chunks_exact(SH_LEN)
        .zip(basis.chunks_exact(SH_COEFFS))
        .map(|(row, b)| sh_eval_basis(row, b.try_into().expect("basis row")))
        .collect())
}

/// Renders the canonical scene `scene` under the illumination of
/// `reference`, which may come from any scene.
pub fn transfer_lighting(
    scene: &GaussianScene,
    reference: &Image,
    encoder: &EncoderParams,
    adapter: &AdapterParams,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    if encoder.is_all_zero() || adapter.is_all_zero() {
        log::warn!("transfer_lighting called with all-zero (untrained) parameters");
    }
    if scene.is_empty() {
        return rasterize(scene, None, &camera.intrinsics, &camera.extrinsics, cfg);
    }
    let code = encode_light(reference, encoder)?;
    let canonical = Tensor::matrix(scene.len(), SH_LEN, scene.sh_table())?;
    let table = adapt_colors(&canonical, &code, adapter)?;
    let colors = colors_from_table(scene, &table, camera)?;
    rasterize(scene, Some(&colors), &camera.intrinsics, &camera.extrinsics, cfg)
}

/// The scene with its SH replaced by the adapter output for `code`.
pub fn adapted_scene(scene: &GaussianScene, code: &LightCode, adapter: &AdapterParams) -> Result<GaussianScene> {
    if scene.is_empty() {
        return Ok(scene.clone());
    }
    let canonical = Tensor::matrix(scene.len(), SH_LEN, scene.sh_table())?;
    let table = adapt_colors(&canonical, code, adapter)?;
    scene.with_sh_table(table.data())
}
