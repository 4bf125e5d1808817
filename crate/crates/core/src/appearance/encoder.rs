use rand::Rng;

use super::{load_named, xavier, LightCode, LIGHT_CODE_DIM};
use crate::error::{numeric_err, Result};
use crate::imaging::Image;
use crate::numerics::{dense, Checkpoint, Tape, Tensor, Var};

/// Side length images are resampled to before encoding.
pub const ENCODER_INPUT_SIZE: usize = 64;
pub const ENCODER_CHANNELS: [usize; 4] = [8, 16, 32, 64];
/// Head MLP widths: pooled features → hidden → code.
pub const ENCODER_HEAD: [usize; 3] = [64, 32, LIGHT_CODE_DIM];
const KERNEL: usize = 3;
const STRIDE: usize = 2;

/// Conv stack and head weights, in the fixed order given by [`EncoderParams::names`].
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    tensors: Vec<Tensor>,
}

impl EncoderParams {
    pub fn names() -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..ENCODER_CHANNELS.len() {
            names.push(format!("conv{i}.w"));
            names.push(format!("conv{i}.b"));
        }
        for i in 0..ENCODER_HEAD.len() - 1 {
            names.push(format!("head{i}.w"));
            names.push(format!("head{i}.b"));
        }
        names
    }

    pub fn shapes() -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut c_in = 3;
        for &c_out in &ENCODER_CHANNELS {
            shapes.push(vec![c_out, c_in, KERNEL, KERNEL]);
            shapes.push(vec![c_out]);
            c_in = c_out;
        }
        for w in ENCODER_HEAD.windows(2) {
            shapes.push(vec![w[0], w[1]]);
            shapes.push(vec![1, w[1]]);
        }
        shapes
    }

    pub fn zeros() -> Self {
        Self {
            tensors: Self::shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Uniform Xavier weights, zero biases.
    pub fn init(rng: &mut impl Rng) -> Self {
        let tensors = Self::shapes()
            .into_iter()
            .map(|s| match s.len() {
                4 => {
                    let area = s[2] * s[3];
                    xavier(&s, s[1] * area, s[0] * area, 1.0, rng)
                }
                2 if s[0] > 1 => xavier(&s, s[0], s[1], 1.0, rng),
                _ => Tensor::zeros(&s),
            })
            .collect();
        Self { tensors }
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

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (name, t) in Self::names().into_iter().zip(&self.tensors) {
            ckpt.insert(name, t.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            tensors: load_named(ckpt, &Self::names(), &Self::shapes())?,
        })
    }

    /// Puts every tensor on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
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
        EncoderVars { vars }
    }
}

/// Tape handles for an [`EncoderParams`], same order as its tensors.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub vars: Vec<Var>,
}

/// The encoder input: `image` resampled to 64×64 as a `3×64×64` tensor.
pub fn image_to_tensor(image: &Image) -> Result<Tensor> {
    if !image.is_finite() {
        return Err(numeric_err!("light encoder input has non-finite pixels"));
    }
    let img = image.square_resized(ENCODER_INPUT_SIZE);
    let (w, h) = (img.width(), img.height());
    let mut chw = vec![0.0; 3 * w * h];
    for (p, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            chw[c * w * h + p] = px[c];
        }
    }
    Tensor::new(vec![3, h, w], chw)
}

/// Encoder forward pass on `tape`; returns the `1×16` code node.
pub fn encoder_forward(tape: &mut Tape, input: Var, vars: &EncoderVars) -> Result<Var> {
    let v = &vars.vars;
    let mut x = input;
    let n_conv = ENCODER_CHANNELS.len();
    for i in 0..n_conv {
        x = tape.conv2d(x, v[2 * i], STRIDE)?;
        x = tape.add_channel_bias(x, v[2 * i + 1])?;
        x = tape.tanh(x);
    }
    x = tape.spatial_mean(x)?;
    let n_head = ENCODER_HEAD.len() - 1;
    for i in 0..n_head {
        let base = 2 * (n_conv + i);
        x = dense(tape, x, v[base], v[base + 1])?;
        if i + 1 < n_head {
            x = tape.tanh(x);
        }
    }
    Ok(x)
}

/// Light code of `image`.
pub fn encode_light(image: &Image, params: &EncoderParams) -> Result<LightCode> {
    let mut tape = Tape::new();
    let input = tape.constant(image_to_tensor(image)?);
    let vars = params.register(&mut tape, false);
    let code = encoder_forward(&mut tape, input, &vars)?;
    LightCode::from_slice(tape.value(code).data())
}
