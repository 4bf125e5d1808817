//! Gaussian primitives and scenes.

mod merge;
mod ply;
pub mod sh;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{contract_err, Result};

pub use merge::voxel_merge;
pub use ply::{read_ply, read_ply_bytes, write_ply, write_ply_bytes};
pub use sh::{sh_basis, sh_eval, sh_eval_basis, sh_from_rgb};

pub const SH_DEGREE: usize = 4;
/// Coefficients per color channel, `(SH_DEGREE + 1)²`.
pub const SH_COEFFS: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);
/// Coefficients per Gaussian, channel-major `[R:25][G:25][B:25]`.
pub const SH_LEN: usize = 3 * SH_COEFFS;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// `opacity = sigmoid(opacity_logit)`.
    pub opacity_logit: f64,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    /// Per-axis `ln(scale)` in world units.
    pub log_scale: Vector3<f64>,
    pub sh: [f64; SH_LEN],
}

impl Gaussian {
    pub fn new(position: Vector3<f64>, opacity: f64, scale: f64, sh: [f64; SH_LEN]) -> Self {
        Self {
            position,
            opacity_logit: logit(opacity),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            sh,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    /// Checks the type invariants; `index` only labels the error message.
    pub fn validate(&self, index: usize) -> Result<()> {
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-9 {
            return Err(contract_err!("gaussian {index}: rotation norm is {qn}"));
        }
        let s = self.scale();
        if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(contract_err!("gaussian {index}: invalid scale {s:?}"));
        }
        if !self.is_finite() {
            return Err(contract_err!("gaussian {index}: non-finite parameters"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
    }
}

/// World-space covariance `R · diag(s)² · Rᵀ`.
pub fn covariance(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let s = g.scale();
    let m = r * Matrix3::from_diagonal(&s);
    m * m.transpose()
}

/// Normalizes a quaternion `(w, x, y, z)`.
pub fn normalize_quaternion(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub scene_id: String,
}

impl GaussianScene {
    pub fn new(scene_id: impl Into<String>, gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            scene_id: scene_id.into(),
        }
    }

    pub fn sh_degree(&self) -> usize {
        SH_DEGREE
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussians.iter().enumerate().try_for_each(|(i, g)| g.validate(i))
    }

    /// The `N×75` coefficient table, row-major.
    pub fn sh_table(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.sh).collect()
    }

    /// Same geometry with the coefficients replaced from an `N×75` table.
    pub fn with_sh_table(&self, table: &[f64]) -> Result<Self> {
        if table.len() != self.len() * SH_LEN {
            return Err(contract_err!(
                "SH table has {} values for {} gaussians",
                table.len(),
                self.len()
            ));
        }
        let mut out = self.clone();
        for (g, row) in out.gaussians.iter_mut().zip(table.chunks_exact(SH_LEN)) {
            g.sh.copy_from_slice(row);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_rotation(q: [f64; 4], log_scale: Vector3<f64>) -> Gaussian {
        Gaussian {
            position: Vector3::zeros(),
            opacity_logit: 0.0,
            rotation: normalize_quaternion(q),
            log_scale,
            sh: [0.0; SH_LEN],
        }
    }

    #[test]
    fn axis_aligned_covariance() {
        let g = with_rotation([1.0, 0.0, 0.0, 0.0], Vector3::new(1.0f64, 2.0, 3.0).map(f64::ln));
        let c = covariance(&g);
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0));
        assert!((c - expected).abs().max() < 1e-12);
    }

    #[test]
    fn isotropic_covariance_ignores_rotation() {
        let g = with_rotation([0.3, -0.5, 0.7, 0.1], Vector3::repeat(0.5f64.ln()));
        let c = covariance(&g);
        assert!((c - Matrix3::identity() * 0.25).abs().max() < 1e-12);
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for p in [1e-6, 0.1, 0.5, 0.9, 0.999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn validation() {
        let mut g = Gaussian::new(Vector3::zeros(), 0.5, 1.0, [0.0; SH_LEN]);
        assert!(g.validate(0).is_ok());
        g.rotation = [1.0, 1.0, 0.0, 0.0];
        assert!(g.validate(0).is_err());
        g.rotation = [1.0, 0.0, 0.0, 0.0];
        g.sh[3] = f64::NAN;
        assert!(g.validate(0).is_err());
    }
}
