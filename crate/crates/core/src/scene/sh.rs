// Real spherical harmonics up to degree 4 with the usual graphics
// normalization and sign convention (same constants as the reference
// splatting implementations).

use nalgebra::Vector3;

use super::{SH_COEFFS, SH_LEN};
use crate::error::{contract_err, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];
pub const SH_C4: [f64; 9] = [
    2.503_342_941_796_704_6,
    -1.770_130_769_779_930_4,
    0.946_174_695_757_560_1,
    -0.669_046_543_557_289_2,
    0.105_785_546_915_204_31,
    -0.669_046_543_557_289_2,
    0.473_087_347_878_780_04,
    -1.770_130_769_779_930_4,
    0.625_835_735_449_176_1,
];

/// Offset added to the SH sum so that all-zero coefficients give mid-gray.
pub const SH_COLOR_OFFSET: f64 = 0.5;

/// The 25 basis functions `Y_ℓm(dir)` for ℓ = 0..=4, in the usual
/// `ℓ² + ℓ + m` order. `dir` is assumed to be unit length.
pub fn sh_basis(dir: &Vector3<f64>) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
        SH_C4[0] * xy * (xx - yy),
        SH_C4[1] * yz * (3.0 * xx - yy),
        SH_C4[2] * xy * (7.0 * zz - 1.0),
        SH_C4[3] * yz * (7.0 * zz - 3.0),
        SH_C4[4] * (zz * (35.0 * zz - 30.0) + 3.0),
        SH_C4[5] * xz * (7.0 * zz - 3.0),
        SH_C4[6] * (xx - yy) * (7.0 * zz - 1.0),
        SH_C4[7] * xz * (xx - 3.0 * yy),
        SH_C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy)),
    ]
}

/// Degree ℓ of the coefficient at index `k` within one channel.
pub fn sh_degree_of(k: usize) -> usize {
    (k as f64).sqrt() as usize
}

/// Raw (unclamped) RGB from channel-major coefficients and a precomputed
/// basis.
pub fn sh_eval_basis(sh: &[f64], basis: &[f64; SH_COEFFS]) -> [f64; 3] {
    debug_assert_eq!(sh.len(), SH_LEN);
    let mut rgb = [SH_COLOR_OFFSET; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let coeffs = &sh[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        *out += coeffs.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>();
    }
    rgb
}

/// Raw RGB seen along `dir`. Clamping to [0, 1] happens at render time.
pub fn sh_eval(sh: &[f64], dir: &Vector3<f64>) -> Result<[f64; 3]> {
    if sh.len() != SH_LEN {
        return Err(contract_err!("expected {SH_LEN} SH coefficients, got {}", sh.len()));
    }
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(contract_err!("view direction must be unit length, |dir| = {norm}"));
    }
    Ok(sh_eval_basis(sh, &sh_basis(dir)))
}

/// Coefficients of a view-independent color: only the DC terms are set.
pub fn sh_from_rgb(rgb: [f64; 3]) -> [f64; SH_LEN] {
    let mut sh = [0.0; SH_LEN];
    for c in 0..3 {
        sh[c * SH_COEFFS] = (rgb[c] - SH_COLOR_OFFSET) / SH_C0;
    }
    sh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only() {
        let mut sh = [0.0; SH_LEN];
        sh[0] = 0.7;
        let dir = Vector3::new(0.3, -0.4, 0.5).normalize();
        let rgb = sh_eval(&sh, &dir).unwrap();
        assert!((rgb[0] - (0.5 + 0.7 * 0.2820947918)).abs() < 1e-10);
        assert_eq!(rgb[1], 0.5);
    }

    #[test]
    fn zero_is_mid_gray() {
        let rgb = sh_eval(&[0.0; SH_LEN], &Vector3::z()).unwrap();
        assert_eq!(rgb, [0.5; 3]);
    }

    #[test]
    fn degree_one_is_odd() {
        let mut sh = [0.0; SH_LEN];
        sh[2] = 0.4; // Y_1,0 ∝ z
        let up = sh_eval(&sh, &Vector3::z()).unwrap()[0];
        let down = sh_eval(&sh, &-Vector3::z()).unwrap()[0];
        assert!((up - 0.5 + (down - 0.5)).abs() < 1e-15);
        assert!((up - 0.5 - 0.4 * SH_C1).abs() < 1e-15);
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(sh_eval(&[0.0; SH_LEN], &Vector3::new(0.0, 0.0, 2.0)).is_err());
        assert!(sh_eval(&[0.0; 10], &Vector3::z()).is_err());
    }

    #[test]
    fn degrees() {
        let d: Vec<usize> = (0..25).map(sh_degree_of).collect();
        assert_eq!(&d[..4], &[0, 1, 1, 1]);
        assert_eq!(d[8], 2);
        assert_eq!(d[9], 3);
        assert_eq!(d[15], 3);
        assert_eq!(d[16], 4);
        assert_eq!(d[24], 4);
    }

    #[test]
    fn from_rgb_inverts_dc() {
        let sh = sh_from_rgb([0.2, 0.5, 0.9]);
        let rgb = sh_eval(&sh, &Vector3::x()).unwrap();
        for (a, b) in rgb.iter().zip([0.2, 0.5, 0.9]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
