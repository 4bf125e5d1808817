//! Rasterizer and SH evaluation as autodiff-tape ops.

use std::sync::Arc;

use super::{rasterize_backward, rasterize_retain, RenderConfig, RenderOutput};
use crate::camera::{Extrinsics, Intrinsics};
use crate::error::{contract_err, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::scene::{GaussianScene, SH_COEFFS, SH_LEN};

/// Raw RGB (`N×3`) from an `N×75` SH table and a fixed `N×25` basis.
///
/// Rows are evaluated with the same arithmetic as
/// [`sh_eval_basis`](crate::scene::sh_eval_basis).
pub fn sh_to_rgb(tape: &mut Tape, sh: Var, basis: Arc<Vec<f64>>) -> Result<Var> {
    let (n, cols) = tape.value(sh).dims2()?;
    if cols != SH_LEN || basis.len() != n * SH_COEFFS {
        return Err(contract_err!(
            "SH table {n}x{cols} does not match a basis of {} values",
            basis.len()
        ));
    }
    let table = tape.value(sh).data();
    let mut rgb = Vec::with_capacity(n * 3);
    for (row, b) in table.chunks_exact(SH_LEN).zip(basis.chunks_exact(SH_COEFFS)) {
        let b: &[f64; SH_COEFFS] = b.try_into().expect("chunk of basis length");
        rgb.extend(crate::scene::sh_eval_basis(row, b));
    }
    let value = Tensor::matrix(n, 3, rgb)?;
    Ok(tape.custom(
        &[sh],
        value,
        Box::new(move |g| {
            let mut d = vec![0.0; n * SH_LEN];
            for i in 0..n {
                let b = &basis[i * SH_COEFFS..(i + 1) * SH_COEFFS];
                for c in 0..3 {
                    let gc = g.data()[i * 3 + c];
                    let row = &mut d[i * SH_LEN + c * SH_COEFFS..i * SH_LEN + (c + 1) * SH_COEFFS];
                    row.iter_mut().zip(b).for_each(|(dv, bv)| *dv = gc * bv);
                }
            }
            Ok(vec![Tensor::matrix(n, SH_LEN, d)?])
        }),
    ))
}

/// Renders `scene` with per-Gaussian colors taken from the `N×3` node
/// `colors`. The returned node is the `H×W×3` image; gradients flow into
/// `colors` through [`rasterize_backward`].
pub fn render_colors(
    tape: &mut Tape,
    colors: Var,
    scene: Arc<GaussianScene>,
    k: &Intrinsics,
    e: &Extrinsics,
    cfg: &RenderConfig,
) -> Result<(Var, Arc<RenderOutput>)> {
    let (n, c) = tape.value(colors).dims2()?;
    if n != scene.len() || c != 3 {
        return Err(contract_err!("color table {n}x{c} for {} gaussians", scene.len()));
    }
    let rows: Vec<[f64; 3]> = tape
        .value(colors)
        .data()
        .chunks_exact(3)
        .map(|r| [r[0], r[1], r[2]])
        .collect();
    let out = Arc::new(rasterize_retain(&scene, Some(&rows), k, e, cfg)?);
    let value = Tensor::new(vec![k.height, k.width, 3], out.image.data().to_vec())?;
    let saved = Arc::clone(&out);
    let var = tape.custom(
        &[colors],
        value,
        Box::new(move |g| {
            let (d_color, _) = rasterize_backward(g.data(), &saved, &scene)?;
            Ok(vec![Tensor::matrix(n, 3, d_color.into_iter().flatten().collect())?])
        }),
    );
    Ok((var, out))
}
