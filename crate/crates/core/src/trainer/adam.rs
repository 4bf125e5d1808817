use serde::{Deserialize, Serialize};

use crate::error::{numeric_err, shape_err, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl Moments {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn optimizer_step(param: &mut Tensor, grad: &Tensor, moments: &mut Moments, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != moments.m.shape() {
        return Err(shape_err!(
            "optimizer shapes differ: param {:?}, grad {:?}, moments {:?}",
            param.shape(),
            grad.shape(),
            moments.m.shape()
        ));
    }
    if !grad.is_finite() {
        return Err(numeric_err!("non-finite gradient (max |g| = {})", grad.max_abs()));
    }
    moments.step += 1;
    let t = moments.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (m, v) = (moments.m.data_mut(), moments.v.data_mut());
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
