//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node index order is already a topological order
//! and the backward sweep simply walks the tape in reverse.

use super::kernels;
use super::Tensor;
use crate::error::{contract_err, shape_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a custom op: maps the output gradient to one gradient
/// per parent, in parent order and with matching shapes.
pub type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>> + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { input: Var, kernels: Var, stride: usize },
    SpatialMean(Var),
    RepeatRows(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    Custom { parents: Vec<Var>, backward: BackwardFn },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRowBias(a, b)
            | AddChannelBias(a, b) | ConcatCols(a, b) => vec![*a, *b],
            MulConst(a, _) | Scale(a, _) | Tanh(a) | Square(a) | Sum(a) | Mean(a)
            | SpatialMean(a) | RepeatRows(a) | Reshape(a) => vec![*a],
            Conv2d { input, kernels, .. } => vec![*input, *kernels],
            Custom { parents, .. } => parents.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`; zeros when nothing has flowed into it.
    pub fn grad(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err!("{what}: shapes {sa:?} and {sb:?} differ"));
        }
        Ok(())
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("shape checked by caller")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_values(a, b, |p, q| p + q);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_values(a, b, |p, q| p - q);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_values(a, b, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Element-wise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != c.shape() {
            return Err(shape_err!("mul_const: {:?} vs {:?}", x.shape(), c.shape()));
        }
        let data = x.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s))
    }

    /// `x + bias` with `bias` broadcast over the rows of the `m×n` matrix `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = kernels::add_row_bias(self.value(x), self.value(bias))?;
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    /// `x + bias` with one bias per channel of a `C×H×W` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(shape_err!("channel bias of length {} for {c} channels", b.len()));
        }
        let mut value = self.value(x).clone();
        for (chan, plane) in value.data_mut().chunks_exact_mut(h * w).enumerate() {
            let bv = b.data()[chan];
            plane.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.push(value, Op::AddChannelBias(x, bias)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = kernels::tanh(self.value(a));
        self.push(value, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(value, Op::Mean(a))
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let value = kernels::conv2d(self.value(input), self.value(kernels), stride)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                stride,
            },
        ))
    }

    /// Per-channel mean of a `C×H×W` tensor, returned as a `1×C` row.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let n = (h * w) as f64;
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum::<f64>() / n)
            .collect();
        Ok(self.push(Tensor::matrix(1, c, data)?, Op::SpatialMean(x)))
    }

    /// Stacks `n` copies of a `1×k` row into an `n×k` matrix.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let (r, k) = self.value(row).dims2()?;
        if r != 1 || n == 0 {
            return Err(shape_err!("repeat_rows needs a 1xk row and n >= 1"));
        }
        let data = self.value(row).data().repeat(n);
        Ok(self.push(Tensor::matrix(n, k, data)?, Op::RepeatRows(row)))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.value(a).dims2()?;
        let (m2, q) = self.value(b).dims2()?;
        if m != m2 {
            return Err(shape_err!("concat_cols: {m} rows vs {m2} rows"));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&x[i * p..(i + 1) * p]);
            data.extend_from_slice(&y[i * q..(i + 1) * q]);
        }
        Ok(self.push(Tensor::matrix(m, p + q, data)?, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Registers an op whose value was computed outside the tape.
    pub fn custom(&mut self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        self.push(
            value,
            Op::Custom {
                parents: parents.to_vec(),
                backward,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`; gradients are added to whatever
    /// earlier calls accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let parent_grads = self.local_grads(node, &g)?;
            for (p, pg) in parent_grads {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut adj[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(*a) {
                    out.push((*a, kernels::matmul_nt(g, val(*b))?));
                }
                if want(*b) {
                    out.push((*b, kernels::matmul_tn(val(*a), g)?));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![(*a, hadamard(g, val(*b))), (*b, hadamard(g, val(*a)))],
            Op::MulConst(a, c) => vec![(*a, hadamard(g, c))],
            Op::Scale(a, s) => vec![(*a, g.map(|v| v * s))],
            Op::AddRowBias(x, b) => {
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                vec![
                    (*x, g.clone()),
                    (*b, Tensor::new(val(*b).shape().to_vec(), gb)?),
                ]
            }
            Op::AddChannelBias(x, b) => {
                let (_, h, w) = g.dims3()?;
                let gb = g.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
                vec![
                    (*x, g.clone()),
                    (*b, Tensor::new(val(*b).shape().to_vec(), gb)?),
                ]
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                vec![(*a, Tensor::new(y.shape().to_vec(), data)?)]
            }
            Op::Square(a) => {
                let x = val(*a);
                let data = g.data().iter().zip(x.data()).map(|(gv, xv)| 2.0 * xv * gv).collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let x = val(*a);
                vec![(*a, Tensor::filled(x.shape(), g.item() / x.len() as f64))]
            }
            Op::Conv2d {
                input,
                kernels: k,
                stride,
            } => {
                let (gx, gk) = kernels::conv2d_backward(val(*input), val(*k), *stride, g)?;
                vec![(*input, gx), (*k, gk)]
            }
            Op::SpatialMean(x) => {
                let (c, h, w) = val(*x).dims3()?;
                let n = (h * w) as f64;
                let mut data = Vec::with_capacity(c * h * w);
                for &gc in g.data() {
                    data.extend(std::iter::repeat(gc / n).take(h * w));
                }
                vec![(*x, Tensor::new(vec![c, h, w], data)?)]
            }
            Op::RepeatRows(row) => {
                let k = val(*row).len();
                let mut gr = vec![0.0; k];
                for r in g.data().chunks_exact(k) {
                    gr.iter_mut().zip(r).for_each(|(acc, v)| *acc += v);
                }
                vec![(*row, Tensor::matrix(1, k, gr)?)]
            }
            Op::ConcatCols(a, b) => {
                let (m, p) = val(*a).dims2()?;
                let q = val(*b).dims2()?.1;
                let (mut ga, mut gb) = (Vec::with_capacity(m * p), Vec::with_capacity(m * q));
                for r in g.data().chunks_exact(p + q) {
                    ga.extend_from_slice(&r[..p]);
                    gb.extend_from_slice(&r[p..]);
                }
                vec![(*a, Tensor::matrix(m, p, ga)?), (*b, Tensor::matrix(m, q, gb)?)]
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape().to_vec())?)],
            Op::Custom { parents, backward } => {
                let grads = backward(g)?;
                if grads.len() != parents.len() {
                    return Err(contract_err!(
                        "custom op returned {} gradients for {} parents",
                        grads.len(),
                        parents.len()
                    ));
                }
                for (p, pg) in parents.iter().zip(&grads) {
                    if pg.shape() != val(*p).shape() {
                        return Err(shape_err!(
                            "custom op gradient shape {:?} for parent of shape {:?}",
                            pg.shape(),
                            val(*p).shape()
                        ));
                    }
                }
                parents.iter().copied().zip(grads).collect()
            }
        })
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("hadamard shapes checked at op creation")
}

/// Dense layer `x·W + b` on the tape.
pub fn dense(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, weight)?;
    tape.add_row_bias(xw, bias)
}
