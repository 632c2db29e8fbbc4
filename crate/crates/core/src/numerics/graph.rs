use std::cell::RefCell;
use std::sync::Arc;

use super::{RngState, Tensor};
use crate::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Gelu(usize),
    Floor(usize, f64),
    Softmax(usize, AxisLayout),
    LogSoftmax(usize, AxisLayout),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    GatherCols {
        x: usize,
        index: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    Select {
        x: usize,
        index: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy)]
struct AxisLayout {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisLayout {
    fn of(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(AxisLayout {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    /// Flat indices of every line along the axis.
    fn lines(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.outer).flat_map(move |o| {
            (0..self.inner).map(move |i| {
                let base = o * self.len * self.inner + i;
                (0..self.len).map(|l| base + l * self.inner).collect()
            })
        })
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    tracked: bool,
    grad: Option<Vec<f64>>,
}

/// Computation tape for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf without gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that shares storage with the caller, e.g. a stored parameter.
    pub fn leaf_shared(&self, value: Arc<Tensor>, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked,
            grad: None,
        });
        Var { graph: self, id }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Tensor, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            tracked,
            grad: None,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    fn derive(&self, op: Op, value: Tensor, inputs: &[usize]) -> Var<'_> {
        let tracked = self.tracked(inputs);
        self.push(op, value, tracked)
    }

    /// Accumulated gradient of a tracked node, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar `loss`; gradients add onto whatever earlier
    /// passes left behind until [`Graph::zero_grad`] is called.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[loss.id].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].tracked {
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn check_2d(&self, id: usize, what: &str) -> Result<(usize, usize)> {
        let v = self.value_of(id);
        match v.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!(
                "{what} expects a matrix, got shape {s:?}"
            ))),
        }
    }
}

fn accumulate(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].tracked {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(buf);
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            let (ad, bd) = (av.data(), bv.data());
            accumulate(nodes, grads, *a, |da| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let bp = &bd[p * n..(p + 1) * n];
                        da[i * k + p] += gi.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            accumulate(nodes, grads, *b, |db| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let row = &mut db[p * n..(p + 1) * n];
                        row.iter_mut().zip(gi).for_each(|(d, x)| *d += aip * x);
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            accumulate(nodes, grads, *a, |da| {
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |d| add_into(d, g));
            accumulate(nodes, grads, *b, |d| add_into(d, g));
        }
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, |d| add_into(d, g));
            let n = nodes[*b].value.len();
            accumulate(nodes, grads, *b, |d| {
                for chunk in g.chunks(n) {
                    add_into(d, chunk);
                }
            });
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |d| add_into(d, g));
            accumulate(nodes, grads, *b, |d| {
                d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * bv[i];
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, |d| {
            d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
        }),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(nodes, grads, *a, |d| add_into(d, g)),
        Op::Exp(a) => {
            let y = out.data();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            });
        }
        Op::Log(a) => {
            let x = nodes[*a].value.data();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / x[i];
                }
            });
        }
        Op::Tanh(a) => {
            let y = out.data();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Gelu(a) => {
            let x = nodes[*a].value.data();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * gelu_grad(x[i]);
                }
            });
        }
        Op::Floor(a, c) => {
            let x = nodes[*a].value.data();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    if x[i] > *c {
                        d[i] += g[i];
                    }
                }
            });
        }
        Op::Softmax(a, layout) => {
            let y = out.data();
            accumulate(nodes, grads, *a, |d| {
                for idx in layout.lines() {
                    let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in &idx {
                        d[i] += y[i] * (g[i] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a, layout) => {
            let y = out.data();
            accumulate(nodes, grads, *a, |d| {
                for idx in layout.lines() {
                    let total: f64 = idx.iter().map(|&i| g[i]).sum();
                    for &i in &idx {
                        d[i] += g[i] - y[i].exp() * total;
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = nodes[*gain].value.len();
            let gv = nodes[*gain].value.data();
            accumulate(nodes, grads, *gain, |d| {
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        d[j] += gr[j] * xr[j];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |d| {
                for gr in g.chunks(n) {
                    add_into(d, gr);
                }
            });
            accumulate(nodes, grads, *x, |d| {
                let nf = n as f64;
                for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_xh = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_xh += dh * xr[j];
                    }
                    let row = &mut d[r * n..(r + 1) * n];
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        row[j] += inv_std[r] / nf * (nf * dh - sum_dh - xr[j] * sum_dh_xh);
                    }
                }
            });
        }
        Op::GatherRows { table, ids } => {
            let h = nodes[*table].value.last_dim();
            accumulate(nodes, grads, *table, |d| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * h..(id + 1) * h], &g[r * h..(r + 1) * h]);
                }
            });
        }
        Op::GatherCols { x, index } => {
            let n = nodes[*x].value.last_dim();
            let m = out.last_dim();
            accumulate(nodes, grads, *x, |d| {
                for (flat, &col) in index.iter().enumerate() {
                    let r = flat / m;
                    d[r * n + col] += g[flat];
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                accumulate(nodes, grads, p, |d| add_into(d, &g[offset..offset + len]));
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let total = out.last_dim();
            let rows = out.rows();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].value.last_dim();
                accumulate(nodes, grads, p, |d| {
                    for r in 0..rows {
                        add_into(
                            &mut d[r * c..(r + 1) * c],
                            &g[r * total + offset..r * total + offset + c],
                        );
                    }
                });
                offset += c;
            }
        }
        Op::SliceCols { x, start } => {
            let n = nodes[*x].value.last_dim();
            let c = out.last_dim();
            accumulate(nodes, grads, *x, |d| {
                for r in 0..out.rows() {
                    add_into(
                        &mut d[r * n + start..r * n + start + c],
                        &g[r * c..(r + 1) * c],
                    );
                }
            });
        }
        Op::SliceRows { x, start } => {
            let n = out.last_dim();
            accumulate(nodes, grads, *x, |d| {
                add_into(&mut d[start * n..start * n + g.len()], g)
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|x| *x += g[0])),
        Op::Mean(a) => {
            let n = nodes[*a].value.len() as f64;
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().for_each(|x| *x += g[0] / n)
            })
        }
        Op::Select { x, index } => accumulate(nodes, grads, *x, |d| {
            for (k, &i) in index.iter().enumerate() {
                d[i] += g[k];
            }
        }),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn map(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].tracked
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    fn same_shape(&self, other: Var<'g>, what: &str) -> Result<(Arc<Tensor>, Arc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
        Ok((a, b))
    }

    fn zip_with(
        self,
        other: Var<'g>,
        what: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>> {
        let (a, b) = self.same_shape(other, what)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.graph.derive(op, value, &[self.id, other.id]))
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'g> {
        self.graph.derive(op, value, &[self.id])
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (m, k, n) = match (a.shape(), b.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => {
                return Err(Error::dim(format!("matmul of {sa:?} by {sb:?}")));
            }
        };
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let bp = &bd[p * n..(p + 1) * n];
                row.iter_mut().zip(bp).for_each(|(o, b)| *o += aip * b);
            }
        }
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self
            .graph
            .derive(Op::MatMul(self.id, other.id), value, &[self.id, other.id]))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let (r, c) = self.graph.check_2d(self.id, "transpose")?;
        let a = self.value();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Op::Transpose(self.id), Tensor::from_parts(vec![c, r], out)))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    /// Adds a vector to every row (last axis).
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), row.value());
        let n = a.last_dim();
        if b.len() != n {
            return Err(Error::dim(format!(
                "add_row of {:?} to rows of {:?}",
                b.shape(),
                a.shape()
            )));
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(n) {
            add_into(chunk, b.data());
        }
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self
            .graph
            .derive(Op::AddRow(self.id, row.id), value, &[self.id, row.id]))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = map(&self.value(), |x| c * x);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let v = map(&self.value(), |x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    pub fn exp(self) -> Var<'g> {
        let v = map(&self.value(), f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn ln(self) -> Var<'g> {
        let v = map(&self.value(), f64::ln);
        self.unary(Op::Log(self.id), v)
    }

    pub fn tanh(self) -> Var<'g> {
        let v = map(&self.value(), f64::tanh);
        self.unary(Op::Tanh(self.id), v)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'g> {
        let v = map(&self.value(), gelu);
        self.unary(Op::Gelu(self.id), v)
    }

    /// Elementwise `max(x, c)`; the gradient passes only where `x > c`.
    pub fn floor_at(self, c: f64) -> Var<'g> {
        let v = map(&self.value(), |x| x.max(c));
        self.unary(Op::Floor(self.id, c), v)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        let layout = AxisLayout::of(a.shape(), axis)?;
        let mut out = a.data().to_vec();
        for idx in layout.lines() {
            let max = idx
                .iter()
                .map(|&i| out[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in &idx {
                out[i] = (out[i] - max).exp();
                z += out[i];
            }
            for &i in &idx {
                out[i] /= z;
            }
        }
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.unary(Op::Softmax(self.id, layout), value))
    }

    pub fn softmax_last(self) -> Var<'g> {
        let axis = self.value().shape().len() - 1;
        self.softmax(axis).expect("last axis exists")
    }

    /// `x - logsumexp(x)` along `axis`, max-subtracted.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        let layout = AxisLayout::of(a.shape(), axis)?;
        let mut out = a.data().to_vec();
        for idx in layout.lines() {
            let max = idx
                .iter()
                .map(|&i| out[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max + idx.iter().map(|&i| (out[i] - max).exp()).sum::<f64>().ln();
            for &i in &idx {
                out[i] -= lse;
            }
        }
        let value = Tensor::from_parts(a.shape().to_vec(), out);
        Ok(self.unary(Op::LogSoftmax(self.id, layout), value))
    }

    pub fn log_softmax_last(self) -> Var<'g> {
        let axis = self.value().shape().len() - 1;
        self.log_softmax(axis).expect("last axis exists")
    }

    /// Normalizes every vector along the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'g>, bias: Var<'g>, eps: f64) -> Result<Var<'g>> {
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let n = x.last_dim();
        if gv.len() != n || bv.len() != n {
            return Err(Error::dim(format!(
                "layer_norm over last axis of {:?} with gain {:?} and bias {:?}",
                x.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let rows = x.rows();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
        };
        Ok(self.graph.derive(op, value, &[self.id, gain.id, bias.id]))
    }

    /// Embedding lookup: rows `ids` of a `[V×H]` table, giving `[len×H]`.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'g>> {
        let (v, h) = self.graph.check_2d(self.id, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::dim("gather_rows with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim(format!(
                "row id {bad} out of range for table of {v} rows"
            )));
        }
        let t = self.value();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_parts(vec![ids.len(), h], out);
        Ok(self.unary(
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    /// `out[i, j] = x[i, index[i * cols + j]]` for a `[rows×n]` input.
    pub fn gather_cols(self, index: &[usize], cols: usize) -> Result<Var<'g>> {
        let (r, n) = self.graph.check_2d(self.id, "gather_cols")?;
        if cols == 0 || index.len() != r * cols {
            return Err(Error::dim(format!(
                "gather_cols index of length {} does not tile {r}x{cols}",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!(
                "column {bad} out of range for {n} columns"
            )));
        }
        let x = self.value();
        let out = index
            .iter()
            .enumerate()
            .map(|(flat, &c)| x.data()[(flat / cols) * n + c])
            .collect();
        let value = Tensor::from_parts(vec![r, cols], out);
        Ok(self.unary(
            Op::GatherCols {
                x: self.id,
                index: index.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>> {
        let x = self.value();
        let n = x.last_dim();
        if start >= end || end > n {
            return Err(Error::dim(format!(
                "column slice {start}..{end} of shape {:?}",
                x.shape()
            )));
        }
        let c = end - start;
        let mut out = Vec::with_capacity(x.rows() * c);
        for r in 0..x.rows() {
            out.extend_from_slice(&x.row(r)[start..end]);
        }
        let value = Tensor::from_parts(vec![x.rows(), c], out);
        Ok(self.unary(Op::SliceCols { x: self.id, start }, value))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g>> {
        let x = self.value();
        if start >= end || end > x.rows() {
            return Err(Error::dim(format!(
                "row slice {start}..{end} of shape {:?}",
                x.shape()
            )));
        }
        let n = x.last_dim();
        let value = Tensor::from_parts(vec![end - start, n], x.data()[start * n..end * n].to_vec());
        Ok(self.unary(Op::SliceRows { x: self.id, start }, value))
    }

    pub fn row(self, i: usize) -> Result<Var<'g>> {
        self.slice_rows(i, i + 1)?
            .reshape(&[self.value().last_dim()])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        let value = Tensor::new(shape.to_vec(), x.data().to_vec())
            .map_err(|_| Error::dim(format!("reshape {:?} to {shape:?}", x.shape())))?;
        Ok(self.unary(Op::Reshape(self.id), value))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.unary(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'g> {
        let x = self.value();
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.unary(Op::Mean(self.id), Tensor::scalar(s))
    }

    /// Picks flat elements, giving a vector of `index.len()` values.
    pub fn select(self, index: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        if index.is_empty() {
            return Err(Error::dim("select with empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= x.len()) {
            return Err(Error::dim(format!(
                "select index {bad} out of range for {} values",
                x.len()
            )));
        }
        let data = index.iter().map(|&i| x.data()[i]).collect();
        Ok(self.unary(
            Op::Select {
                x: self.id,
                index: index.to_vec(),
            },
            Tensor::vector(data),
        ))
    }
}

impl Graph {
    /// Stacks inputs along rows; each input is viewed as `[rows×cols]` over its last axis.
    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows of nothing"))?;
        let cols = first.value().last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            if v.last_dim() != cols {
                return Err(Error::dim(format!(
                    "concat_rows of {:?} with {:?}",
                    first.shape(),
                    v.shape()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.derive(Op::ConcatRows(ids.clone()), value, &ids))
    }

    /// Joins inputs side by side; all must have the same number of rows.
    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols of nothing"))?;
        let rows = first.value().rows();
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
            return Err(Error::dim(format!(
                "concat_cols of {:?} with {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        let total: usize = values.iter().map(|v| v.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = Tensor::from_parts(vec![rows, total], data);
        Ok(self.derive(Op::ConcatCols(ids.clone()), value, &ids))
    }

    /// Sum of scalars.
    pub fn add_all<'g>(&'g self, terms: &[Var<'g>]) -> Result<Var<'g>> {
        let mut it = terms.iter().copied();
        let first = it.next().ok_or_else(|| Error::dim("add_all of nothing"))?;
        it.try_fold(first, |acc, t| acc.add(t))
    }
}

/// Reparameterized Gaussian sample `z = mu + exp(logvar / 2) * eps`, `eps ~ N(0, I)`.
///
/// Returns the sample and the noise that produced it.
pub fn reparameterize<'g>(
    mu: Var<'g>,
    logvar: Var<'g>,
    rng: &mut RngState,
) -> Result<(Var<'g>, Tensor)> {
    let lv = logvar.value();
    if mu.shape() != lv.shape() {
        return Err(Error::dim(format!(
            "reparameterize: mu {:?} vs logvar {:?}",
            mu.shape(),
            lv.shape()
        )));
    }
    if let Some(bad) = lv.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite log-variance {bad}")));
    }
    let eps = Tensor::from_parts(lv.shape().to_vec(), rng.normal_vec(lv.len()));
    let noise = mu.graph().constant(eps.clone());
    let z = mu.add(logvar.scale(0.5).exp().mul(noise)?)?;
    Ok((z, eps))
}
