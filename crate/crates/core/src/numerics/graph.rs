use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (`None` for inputs that receive nothing).
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Softmax(Var),
    LayerNorm { input: Var, eps: f64 },
    Gelu(Var),
    SinEmbed { input: Var, freqs: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// Nodes only reference earlier nodes, so insertion order is a topological
/// order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `c = a * b + beta * c` for strided `a (m x k)` and `b (k x n)`, row-major `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index addressed by the given
    // strides, which describe either a row-major or a transposed view of
    // buffers of exactly those sizes.
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

/// Plain matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        a.data(),
        (k as isize, 1),
        b.data(),
        (n as isize, 1),
        0.0,
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

fn check_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    let ok = a == b
        || (b.len() + 1 == a.len() && b == &a[1..])
        || (b.len() == a.len() && b.len() > 1 && b[0] == 1 && b[1..] == a[1..]);
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

/// Sums a full-size gradient down to the (possibly broadcast) shape `target`.
fn reduce_to(grad: Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad;
    }
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    for (i, g) in grad.data().iter().enumerate() {
        out[i % n] += g;
    }
    Tensor::new(target.to_vec(), out).expect("target shape is consistent")
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf_arc(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf sharing storage with the caller.
    pub fn param(&mut self, value: Arc<Tensor>) -> Var {
        self.leaf_arc(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf_arc(Arc::new(value), false)
    }

    pub fn constant_arc(&mut self, value: Arc<Tensor>) -> Var {
        self.leaf_arc(value, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_broadcast(name, av.shape(), bv.shape())?;
        let bl = bv.len();
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % bl]))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg, name)
    }

    /// `a + b`; `b` may broadcast along the leading axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg, "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rank() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = transpose2(x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg, "transpose")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Contract(format!("concat axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let same = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !same {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, inner) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: shape.to_vec(),
                rhs: vec![axis, start, len],
            });
        }
        let (outer, inner) = outer_inner(shape, axis);
        let d = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Slice { input: a, axis, start }, rg, "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg, "reshape")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg, "softmax")
    }

    /// Normalizes the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let (mean, inv) = row_stats(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::LayerNorm { input: a, eps }, rg, "layer_norm")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu_scalar);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg, "gelu")
    }

    /// Sinusoidal embedding of a vector of (continuous) timesteps: shape
    /// `[n]` to `[n, dim]`, sines in the first half and cosines in the second.
    pub fn sinusoidal_embed(&mut self, t: Var, dim: usize) -> Result<Var> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::Contract(format!("embedding dim {dim} must be even")));
        }
        let x = self.value(t);
        if x.rank() != 1 {
            return Err(Error::Shape {
                op: "sinusoidal_embed",
                lhs: x.shape().to_vec(),
                rhs: vec![dim],
            });
        }
        let half = dim / 2;
        let freqs: Vec<f64> = (0..half)
            .map(|j| (-(10_000f64.ln()) * j as f64 / half as f64).exp())
            .collect();
        let n = x.len();
        let mut data = vec![0.0; n * dim];
        for (i, &tv) in x.data().iter().enumerate() {
            for (j, f) in freqs.iter().enumerate() {
                data[i * dim + j] = (tv * f).sin();
                data[i * dim + half + j] = (tv * f).cos();
            }
        }
        let out = Tensor::new(vec![n, dim], data)?;
        let rg = self.rg(&[t]);
        self.push(out, Op::SinEmbed { input: t, freqs }, rg, "sinusoidal_embed")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / x.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg, "mean")
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape {
                op: "mse",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let s: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        let out = Tensor::scalar(s / x.len() as f64);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mse(a, b), rg, "mse")
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let rg = self.rg(inputs);
        let name = op.name();
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
            name,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, reduce_to(g.clone(), self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, reduce_to(g.map(|x| -x), self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bl = bv.len();
                if self.requires_grad(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * bv.data()[i % bl])
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), data)?);
                }
                if self.requires_grad(*b) {
                    let full = g.zip_map(av, |gi, x| gi * x)?;
                    self.accumulate(grads, *b, reduce_to(full, bv.shape()));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        g.data(),
                        (n as isize, 1),
                        bv.data(),
                        (1, n as isize),
                        0.0,
                        &mut ga,
                    );
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        av.data(),
                        (1, k as isize),
                        g.data(),
                        (n as isize, 1),
                        0.0,
                        &mut gb,
                    );
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose2(g)),
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis];
                let mut offset = 0;
                for p in parts {
                    let ps = self.shape(*p).to_vec();
                    let d = ps[*axis];
                    if self.requires_grad(*p) {
                        let mut data = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + d * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::new(ps, data)?);
                    }
                    offset += d;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input).to_vec();
                let (outer, inner) = outer_inner(&shape, *axis);
                let d = shape[*axis];
                let len = out.shape()[*axis];
                let mut data = vec![0.0; shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * d + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *input, Tensor::new(shape, data)?);
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.reshape(&shape)?);
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut data = vec![0.0; out.len()];
                for ((dst, y), gr) in data
                    .chunks_mut(c)
                    .zip(out.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dst[j] = y[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data)?);
            }
            Op::LayerNorm { input, eps } => {
                let x = self.value(*input);
                let c = x.cols();
                let mut data = vec![0.0; x.len()];
                for (((dst, xr), yr), gr) in data
                    .chunks_mut(c)
                    .zip(x.data().chunks(c))
                    .zip(out.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let (_, inv) = row_stats(xr, *eps);
                    let gm = gr.iter().sum::<f64>() / c as f64;
                    let gym = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dst[j] = inv * (gr[j] - gm - yr[j] * gym);
                    }
                }
                self.accumulate(grads, *input, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |gi, xi| gi * gelu_grad(xi))?);
            }
            Op::SinEmbed { input, freqs } => {
                let t = self.value(*input);
                let dim = out.cols();
                let half = dim / 2;
                let data = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &tv)| {
                        freqs
                            .iter()
                            .enumerate()
                            .map(|(j, f)| {
                                g.data()[i * dim + j] * f * (tv * f).cos()
                                    - g.data()[i * dim + half + j] * f * (tv * f).sin()
                            })
                            .sum()
                    })
                    .collect();
                self.accumulate(grads, *input, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let gv = g.data()[0] / n;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::Mse(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.data()[0] / x.len() as f64;
                let d = x.zip_map(y, |p, q| k * (p - q))?;
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, d.map(|v| -v));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&vals, out, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if gi.shape() != self.shape(*v) {
                            return Err(Error::Shape {
                                op: "custom backward",
                                lhs: gi.shape().to_vec(),
                                rhs: self.shape(*v).to_vec(),
                            });
                        }
                        self.accumulate(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn transpose2(x: &Tensor) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let d = x.data();
    Tensor::from_fn(&[c, r], |i| d[(i % r) * c + i / r])
}
