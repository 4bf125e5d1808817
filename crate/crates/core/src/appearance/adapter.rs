use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_named, xavier, LightCode, LIGHT_CODE_DIM};
use crate::error::{contract_err, Result};
use crate::numerics::{dense, kernels, Checkpoint, Tape, Tensor, Var};
use crate::scene::SH_LEN;

/// Layer widths, input first.
pub const ADAPTER_WIDTHS: [usize; 6] = [LIGHT_CODE_DIM + SH_LEN, 256, 512, 512, 256, SH_LEN];
const FINAL_LAYER_GAIN: f64 = 0.1;
/// Rows per block in eager inference.
const INFERENCE_BLOCK: usize = 4096;

/// `Direct` outputs the coefficients; `Residual` adds them to the canonical row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterMode {
    #[default]
    Direct,
    Residual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams {
    tensors: Vec<Tensor>,
    pub mode: AdapterMode,
}

impl AdapterParams {
    pub fn names() -> Vec<String> {
        (0..ADAPTER_WIDTHS.len() - 1)
            .flat_map(|i| [format!("layer{i}.w"), format!("layer{i}.b")])
            .collect()
    }

    pub fn shapes() -> Vec<Vec<usize>> {
        ADAPTER_WIDTHS
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![1, w[1]]])
            .collect()
    }

    pub fn zeros(mode: AdapterMode) -> Self {
        Self {
            tensors: Self::shapes().iter().map(|s| Tensor::zeros(s)).collect(),
            mode,
        }
    }

    /// Xavier weights (last layer scaled by 0.1), zero biases.
    pub fn init(mode: AdapterMode, rng: &mut impl Rng) -> Self {
        let n_layers = ADAPTER_WIDTHS.len() - 1;
        let mut tensors = Vec::new();
        for (i, w) in ADAPTER_WIDTHS.windows(2).enumerate() {
            let gain = if i + 1 == n_layers { FINAL_LAYER_GAIN } else { 1.0 };
            tensors.push(xavier(&[w[0], w[1]], w[0], w[1], gain, rng));
            tensors.push(Tensor::zeros(&[1, w[1]]));
        }
        Self { tensors, mode }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    /// Weights plus a `mode` flag tensor (0 direct, 1 residual).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (name, t) in Self::names().into_iter().zip(&self.tensors) {
            ckpt.insert(name, t.clone());
        }
        let flag = if self.mode == AdapterMode::Residual { 1.0 } else { 0.0 };
        ckpt.insert("mode", Tensor::scalar(flag));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mode = match ckpt.get("mode").map(|t| t.data()) {
            Some([v]) if *v == 1.0 => AdapterMode::Residual,
            Some([v]) if *v == 0.0 => AdapterMode::Direct,
            None => AdapterMode::Direct,
            Some(_) => return Err(crate::Error::Data("adapter mode flag must be 0 or 1".into())),
        };
        Ok(Self {
            tensors: load_named(ckpt, &Self::names(), &Self::shapes())?,
            mode,
        })
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> AdapterVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        AdapterVars { vars, mode: self.mode }
    }
}

#[derive(Clone, Debug)]
pub struct AdapterVars {
    pub vars: Vec<Var>,
    pub mode: AdapterMode,
}

/// Adapter on the tape: `canonical` is `N×75`, `code` is `1×16`.
pub fn adapter_forward(tape: &mut Tape, canonical: Var, code: Var, vars: &AdapterVars) -> Result<Var> {
    let (n, cols) = tape.value(canonical).dims2()?;
    if cols != SH_LEN {
        return Err(contract_err!("canonical SH rows must have {SH_LEN} values, got {cols}"));
    }
    if tape.value(code).shape() != [1, LIGHT_CODE_DIM] {
        return Err(contract_err!("light code must be 1x{LIGHT_CODE_DIM}"));
    }
    let codes = tape.repeat_rows(code, n)?;
    let mut x = tape.concat_cols(codes, canonical)?;
    let n_layers = ADAPTER_WIDTHS.len() - 1;
    for i in 0..n_layers {
        x = dense(tape, x, vars.vars[2 * i], vars.vars[2 * i + 1])?;
        if i + 1 < n_layers {
            x = tape.tanh(x);
        }
    }
    if vars.mode == AdapterMode::Residual {
        x = tape.add(x, canonical)?;
    }
    Ok(x)
}

/// Eager adapter inference, block by block over rows. Each row goes through
/// the same kernels as [`adapter_forward`], so results agree exactly.
pub fn adapt_colors(canonical: &Tensor, code: &LightCode, params: &AdapterParams) -> Result<Tensor> {
    let (n, cols) = canonical.dims2()?;
    if cols != SH_LEN {
        return Err(contract_err!("canonical SH rows must have {SH_LEN} values, got {cols}"));
    }
    let starts: Vec<usize> = (0..n).step_by(INFERENCE_BLOCK).collect();
    let blocks = starts
        .into_par_iter()
        .map(|start| adapt_block(canonical, start, INFERENCE_BLOCK.min(n - start), code, params))
        .collect::<Result<Vec<_>>>()?;
    let out = blocks.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::matrix(n, SH_LEN, out)
}

fn adapt_block(canonical: &Tensor, start: usize, rows: usize, code: &LightCode, params: &AdapterParams) -> Result<Tensor> {
    let width = ADAPTER_WIDTHS[0];
    let mut input = Vec::with_capacity(rows * width);
    for r in start..start + rows {
        input.extend_from_slice(&code.0);
        input.extend_from_slice(canonical.row(r));
    }
    let mut x = Tensor::matrix(rows, width, input)?;
    let n_layers = ADAPTER_WIDTHS.len() - 1;
    for i in 0..n_layers {
        x = kernels::matmul(&x, &params.tensors[2 * i])?;
        x = kernels::add_row_bias(&x, &params.tensors[2 * i + 1])?;
        if i + 1 < n_layers {
            x = kernels::tanh(&x);
        }
    }
    if params.mode == AdapterMode::Residual {
        for (r, row) in x.data_mut().chunks_exact_mut(SH_LEN).enumerate() {
            row.iter_mut().zip(canonical.row(start + r)).for_each(|(v, c)| *v += c);
        }
    }
    Ok(x)
}
