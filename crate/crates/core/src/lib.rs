//! Gaussian splatting under varying illumination.
//!
//! Scenes are sets of 3D Gaussians with degree-4 spherical-harmonic colors.
//! A light encoder turns an image into a 16-dimensional light code and an
//! appearance adapter maps `(light code, canonical SH)` to lighting-specific
//! SH coefficients. Training supervises renders with a reconstruction loss
//! that ignores transient (occluded) pixels, following a three-stage
//! curriculum over procedurally generated data.

pub mod appearance;
pub mod camera;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod numerics;
pub mod occlusion;
pub mod render;
pub mod rng;
pub mod scene;
pub mod scenegen;
pub mod trainer;

pub use error::{Error, Result};
