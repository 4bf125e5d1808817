use super::Tensor;
use crate::error::{numeric_err, Result};

/// Denominator floor of the relative error. Gradients that are numerically
/// zero on both routes are compared in absolute terms below this level.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub pass: bool,
}

impl GradCheckReport {
    /// Index of the worst parameter.
    pub fn worst(&self) -> Option<usize> {
        self.rel_errors
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// Compares the analytic gradient returned by `f` against central finite
/// differences. The step for parameter `i` is `h · max(1, |θᵢ|)`.
///
/// `f` maps parameters to `(value, analytic gradient)`.
pub fn grad_check<F>(mut f: F, params: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(h > 0.0) {
        return Err(numeric_err!("finite-difference step must be positive, got {h}"));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() || !analytic.is_finite() {
        return Err(numeric_err!("non-finite value or gradient at the base point"));
    }
    if analytic.shape() != params.shape() {
        return Err(crate::error::shape_err!(
            "gradient shape {:?} differs from parameter shape {:?}",
            analytic.shape(),
            params.shape()
        ));
    }
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let theta = params.data()[i];
        let step = h * theta.abs().max(1.0);
        probe.data_mut()[i] = theta + step;
        let (fp, _) = f(&probe)?;
        probe.data_mut()[i] = theta - step;
        let (fm, _) = f(&probe)?;
        probe.data_mut()[i] = theta;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(numeric_err!("non-finite value while perturbing parameter {i}"));
        }
        numeric.push((fp - fm) / (2.0 * step));
    }
    let analytic = analytic.into_data();
    let rel_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        pass: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dense, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_two() {
        let report = grad_check(
            |p| {
                let x = p.item();
                Ok((x * x, Tensor::scalar(2.0 * x)))
            },
            &Tensor::scalar(2.0),
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
        assert!(report.pass);
    }

    /// 5-layer tanh MLP; all weights packed in one flat parameter vector.
    fn mlp_loss(params: &Tensor, widths: &[usize], input: &Tensor) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let x0 = tape.constant(input.clone());
        let mut offset = 0;
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (fi, fo) = (w[0], w[1]);
            let wt = Tensor::matrix(fi, fo, params.data()[offset..offset + fi * fo].to_vec())?;
            offset += fi * fo;
            let bt = Tensor::matrix(1, fo, params.data()[offset..offset + fo].to_vec())?;
            offset += fo;
            layers.push((tape.param(wt), tape.param(bt)));
        }
        let mut h = x0;
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = dense(&mut tape, h, w, b)?;
            if i + 1 < layers.len() {
                h = tape.tanh(h);
            }
        }
        let sq = tape.square(h);
        let loss = tape.sum(sq);
        tape.backward(loss)?;
        let mut grad = Vec::with_capacity(params.len());
        for &(w, b) in &layers {
            grad.extend_from_slice(tape.grad(w).data());
            grad.extend_from_slice(tape.grad(b).data());
        }
        Ok((tape.value(loss).item(), Tensor::new(params.shape().to_vec(), grad)?))
    }

    #[test]
    fn five_layer_tanh_mlp_passes() {
        let widths = [4, 6, 5, 6, 4, 2];
        let n: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = Tensor::new(vec![n], (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap();
        let input = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(|p| mlp_loss(p, &widths, &input), &params, 1e-5, 1e-5).unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_rule_fails() {
        // custom square op whose backward forgets the factor 2
        let report = grad_check(
            |p| {
                let mut tape = Tape::new();
                let x = tape.param(p.clone());
                let value = p.map(|v| v * v);
                let xv = p.clone();
                let y = tape.custom(
                    &[x],
                    value,
                    Box::new(move |g| Ok(vec![Tensor::new(xv.shape().to_vec(), g.data().iter().zip(xv.data()).map(|(g, x)| g * x).collect())?])),
                );
                let loss = tape.sum(y);
                tape.backward(loss)?;
                Ok((tape.value(loss).item(), tape.grad(x)))
            },
            &Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap(),
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn non_finite_is_reported() {
        let r = grad_check(|_| Ok((f64::NAN, Tensor::scalar(0.0))), &Tensor::scalar(1.0), 1e-5, 1e-5);
        assert!(matches!(r, Err(crate::Error::Numeric(_))));
        let r = grad_check(|p| Ok((p.item(), Tensor::scalar(1.0))), &Tensor::scalar(1.0), 0.0, 1e-5);
        assert!(r.is_err());
    }
}
