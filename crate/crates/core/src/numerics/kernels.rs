//! Raw dense kernels shared by the autodiff tape and the inference paths.
//!
//! Everything here is a pure function of its inputs. The tape calls the
//! same functions, so a forward pass on the tape and an eager forward pass
//! produce bit-identical values.

use super::Tensor;
use crate::error::{shape_err, Result};

/// Transposition flag for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `c = op(a) · op(b) + beta · c` on row-major buffers.
///
/// `a` is stored as `a_rows × a_cols`; with `Trans::Yes` it is read as its
/// transpose. Same for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    ta: Trans,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    tb: Trans,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k, rsa, csa) = match ta {
        Trans::No => (a_rows, a_cols, a_cols as isize, 1),
        Trans::Yes => (a_cols, a_rows, 1, a_cols as isize),
    };
    let (k2, n, rsb, csb) = match tb {
        Trans::No => (b_rows, b_cols, b_cols as isize, 1),
        Trans::Yes => (b_cols, b_rows, 1, b_cols as isize),
    };
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of `m×k` and `k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), m, k, Trans::No, b.data(), k, n, Trans::No, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err!("matmul_tn mismatch: {:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), k, m, Trans::Yes, b.data(), k, n, Trans::No, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(shape_err!("matmul_nt mismatch: {:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), m, k, Trans::No, b.data(), n, k, Trans::Yes, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

/// Adds a `1×n` (or length-n) bias to every row of an `m×n` matrix.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = x.dims2()?;
    if bias.len() != n {
        return Err(shape_err!("bias of length {} for {} columns", bias.len(), n));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Shape bookkeeping for a valid-padding strided convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Self> {
        let (c, h, w) = input.dims3()?;
        let (co, ci, kh, kw) = match *kernels.shape() {
            [co, ci, kh, kw] => (co, ci, kh, kw),
            ref s => return Err(shape_err!("conv kernels must be rank 4, got {s:?}")),
        };
        if ci != c {
            return Err(shape_err!("kernel expects {ci} input channels, input has {c}"));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err!("kernels must be square with odd size, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(shape_err!("stride must be >= 1"));
        }
        if h < kh || w < kw {
            return Err(shape_err!("kernel {kh}x{kw} larger than input {h}x{w}"));
        }
        Ok(Self {
            in_channels: c,
            height: h,
            width: w,
            out_channels: co,
            kernel: kh,
            stride,
            out_height: (h - kh) / stride + 1,
            out_width: (w - kw) / stride + 1,
        })
    }
}

/// Valid-padding strided cross-correlation of a `C×H×W` input with
/// `C'×C×k×k` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernels, stride)?;
    let (x, kd) = (input.data(), kernels.data());
    let k = g.kernel;
    let mut out = vec![0.0; g.out_channels * g.out_height * g.out_width];
    for o in 0..g.out_channels {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let mut acc = 0.0;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let row = (c * g.height + oy * stride + ky) * g.width + ox * stride;
                        let krow = ((o * g.in_channels + c) * k + ky) * k;
                        for kx in 0..k {
                            acc += x[row + kx] * kd[krow + kx];
                        }
                    }
                }
                out[(o * g.out_height + oy) * g.out_width + ox] = acc;
            }
        }
    }
    Tensor::new(vec![g.out_channels, g.out_height, g.out_width], out)
}

/// Gradients of [`conv2d`] with respect to its input and its kernels.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeometry::new(input, kernels, stride)?;
    if grad_out.shape() != [g.out_channels, g.out_height, g.out_width] {
        return Err(shape_err!("conv grad has shape {:?}", grad_out.shape()));
    }
    let (x, kd, go) = (input.data(), kernels.data(), grad_out.data());
    let k = g.kernel;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kd.len()];
    for o in 0..g.out_channels {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let gv = go[(o * g.out_height + oy) * g.out_width + ox];
                if gv == 0.0 {
                    continue;
                }
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let row = (c * g.height + oy * stride + ky) * g.width + ox * stride;
                        let krow = ((o * g.in_channels + c) * k + ky) * k;
                        for kx in 0..k {
                            dx[row + kx] += gv * kd[krow + kx];
                            dk[krow + kx] += gv * x[row + kx];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernels.shape().to_vec(), dk)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let p = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap();
        assert_eq!(matmul(&p, &v).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - acc).abs() < 1e-14);
            }
        }
        // aᵀ·a and a·aᵀ against explicit transposes
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for k in 0..4 {
                at[k * 3 + i] = a.data()[i * 4 + k];
            }
        }
        let at = Tensor::matrix(4, 3, at).unwrap();
        assert_eq!(matmul_tn(&a, &a).unwrap(), matmul(&at, &a).unwrap());
        assert_eq!(matmul_nt(&a, &a).unwrap(), matmul(&a, &at).unwrap());
    }

    #[test]
    fn matmul_rows_do_not_depend_on_batch_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[37, 91], &mut rng);
        let b = random(&[91, 256], &mut rng);
        let full = matmul(&a, &b).unwrap();
        let head = Tensor::matrix(5, 91, a.data()[..5 * 91].to_vec()).unwrap();
        let part = matmul(&head, &b).unwrap();
        assert_eq!(part.data(), &full.data()[..5 * 256]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn conv_ones_times_two() {
        let input = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 1, 1], 2.0);
        let out = conv2d(&input, &k, 1).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_identity_center() {
        let input = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let out = conv2d(&input, &k, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.item(), 5.0);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 8, 8], &mut rng);
        let k = random(&[4, 2, 3, 3], &mut rng);
        let out = conv2d(&x, &k, 2).unwrap();
        assert_eq!(out.shape(), &[4, 3, 3]);
        let at = |c: usize, y: usize, xx: usize| x.data()[(c * 8 + y) * 8 + xx];
        for o in 0..4 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += at(c, 2 * oy + ky, 2 * ox + kx)
                                    * k.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    assert!((out.data()[(o * 3 + oy) * 3 + ox] - acc).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1), Err(crate::Error::Shape(_))));
    }
}
