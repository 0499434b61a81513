use crate::error::{Error, Result};

use super::kernels;
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[.., n] + b[n]`
    AddBias(Var, Var),
    /// `x[.., n] * s[n]`
    MulBias(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Square(Var),
    /// `(x + eps)^(-1/2)`
    Rsqrt(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Mean {
        x: Var,
        map: Vec<usize>,
        count: usize,
    },
    Sum(Var),
    SelectTime {
        x: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
    },
    RepeatLast {
        x: Var,
        n: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended as they are
/// computed, so operands always precede their consumers.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor.grad` when the tensor is
    /// trainable and `v` was reachable from the loss.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        if !tensor.requires_grad() {
            return;
        }
        if let Some(g) = self.get(v) {
            tensor.accumulate_grad(g);
        }
    }
}

fn check_same(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a copy of `t`; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "constant: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose expects a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let value = kernels::transpose(self.value(a), r, c);
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::Shape(format!(
                "reshape: {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::Reshape(a), rg))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        check_same(name, self.shape(a), self.shape(b))?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn last_axis_vec(&self, name: &str, x: Var, v: Var) -> Result<usize> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        match (sx.last(), sv) {
            (Some(&n), [m]) if n == *m => Ok(n),
            _ => Err(Error::Shape(format!("{name}: {sx:?} with vector {sv:?}"))),
        }
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.last_axis_vec("add_bias", x, bias)?;
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, b)| r + b))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::AddBias(x, bias), rg))
    }

    /// Multiplies by a vector along the last axis of `x`.
    pub fn mul_bias(&mut self, x: Var, scale: Var) -> Result<Var> {
        let n = self.last_axis_vec("mul_bias", x, scale)?;
        let s = self.value(scale);
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(s).map(|(r, s)| r * s))
            .collect();
        let rg = self.rg(x) || self.rg(scale);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::MulBias(x, scale), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn rsqrt(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, |v| 1.0 / (v + eps).sqrt(), Op::Rsqrt(x))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xv[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (xv[at(j)] - max).exp();
                    value[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    value[at(j)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(shape, value, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// Arithmetic mean over `axes`; reduced axes are removed from the shape.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::Shape(format!("mean axis {bad} for {shape:?}")));
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        if count == 0 || self.value(x).is_empty() {
            return Err(Error::InvalidArgument("mean over no elements".into()));
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let mut map = Vec::with_capacity(self.value(x).len());
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..self.value(x).len() {
            let mut flat = 0;
            for (ax, (&i, &d)) in idx.iter().zip(&shape).enumerate() {
                if !axes.contains(&ax) {
                    flat = flat * d + i;
                }
            }
            map.push(flat);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let mut value = vec![0.0; out_len];
        for (&m, &v) in map.iter().zip(self.value(x)) {
            value[m] += v;
        }
        let inv = 1.0 / count as f64;
        value.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(out_shape, value, Op::Mean { x, map, count }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    /// `x[:, t, :]` for `x` of shape `[B, T, D]`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || t >= s[1] {
            return Err(Error::Shape(format!("select_time {t} of {s:?}")));
        }
        let (b, tt, d) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(b * d);
        for bi in 0..b {
            let off = (bi * tt + t) * d;
            value.extend_from_slice(&xv[off..off + d]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![b, d], value, Op::SelectTime { x, t }, rg))
    }

    /// Stacks `[B, D]` steps into `[B, T, D]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_time of no steps".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::Shape(format!("stack_time step {s0:?}")));
        }
        for &v in steps {
            check_same("stack_time", &s0, self.shape(v))?;
        }
        let (b, d, t) = (s0[0], s0[1], steps.len());
        let mut value = vec![0.0; b * t * d];
        for (ti, &v) in steps.iter().enumerate() {
            let sv = self.value(v);
            for bi in 0..b {
                let dst = (bi * t + ti) * d;
                value[dst..dst + d].copy_from_slice(&sv[bi * d..(bi + 1) * d]);
            }
        }
        let rg = steps.iter().any(|&v| self.rg(v));
        Ok(self.push(vec![b, t, d], value, Op::StackTime(steps.to_vec()), rg))
    }

    /// `x[.., start..start + len]` along the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s
            .last()
            .ok_or_else(|| Error::Shape("slice_last of a scalar".into()))?;
        if start + len > n {
            return Err(Error::Shape(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(shape, value, Op::SliceLast { x, start }, rg))
    }

    /// Repeats every element `n` times along a new trailing axis.
    pub fn repeat_last(&mut self, x: Var, n: usize) -> Var {
        let value = self
            .value(x)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        let mut shape = self.shape(x).to_vec();
        shape.push(n);
        let rg = self.rg(x);
        self.push(shape, value, Op::RepeatLast { x, n }, rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if ln.requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if n.requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if nodes[a.0].requires_grad {
                    let da = kernels::matmul_nt(g, &nodes[b.0].value, m, n, k);
                    acc(*a, &mut |buf| add_into(buf, &da));
                }
                if nodes[b.0].requires_grad {
                    let db = kernels::matmul_tn(&nodes[a.0].value, g, k, m, n);
                    acc(*b, &mut |buf| add_into(buf, &db));
                }
            }
            Op::Transpose(a) => {
                let s = &node.shape;
                let gt = kernels::transpose(g, s[0], s[1]);
                acc(*a, &mut |buf| add_into(buf, &gt));
            }
            Op::Reshape(a) => acc(*a, &mut |buf| add_into(buf, g)),
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |buf| {
                    for ((o, gi), y) in buf.iter_mut().zip(g).zip(bv) {
                        *o += gi * y;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((o, gi), x) in buf.iter_mut().zip(g).zip(av) {
                        *o += gi * x;
                    }
                });
            }
            Op::AddBias(x, b) => {
                let n = nodes[b.0].value.len();
                acc(*x, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| {
                    for row in g.chunks(n) {
                        add_into(buf, row);
                    }
                });
            }
            Op::MulBias(x, s) => {
                let n = nodes[s.0].value.len();
                let (xv, sv) = (&nodes[x.0].value, &nodes[s.0].value);
                acc(*x, &mut |buf| {
                    for (brow, grow) in buf.chunks_mut(n).zip(g.chunks(n)) {
                        for ((o, gi), si) in brow.iter_mut().zip(grow).zip(sv) {
                            *o += gi * si;
                        }
                    }
                });
                acc(*s, &mut |buf| {
                    for (grow, xrow) in g.chunks(n).zip(xv.chunks(n)) {
                        for ((o, gi), xi) in buf.iter_mut().zip(grow).zip(xrow) {
                            *o += gi * xi;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |buf| {
                buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi * c)
            }),
            Op::Sigmoid(x) => acc(*x, &mut |buf| {
                for ((o, gi), s) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += gi * s * (1.0 - s);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |buf| {
                for ((o, gi), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += gi * (1.0 - y * y);
                }
            }),
            Op::Abs(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |buf| {
                    for ((o, gi), v) in buf.iter_mut().zip(g).zip(xv) {
                        // subgradient 0 at the kink
                        let s = if *v > 0.0 {
                            1.0
                        } else if *v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *o += gi * s;
                    }
                })
            }
            Op::Square(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |buf| {
                    for ((o, gi), v) in buf.iter_mut().zip(g).zip(xv) {
                        *o += 2.0 * gi * v;
                    }
                })
            }
            Op::Rsqrt(x) => acc(*x, &mut |buf| {
                for ((o, gi), y) in buf.iter_mut().zip(g).zip(&node.value) {
                    *o += -0.5 * gi * y * y * y;
                }
            }),
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = &node.value;
                acc(*x, &mut |buf| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..*len {
                                buf[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Mean { x, map, count } => {
                let inv = 1.0 / *count as f64;
                acc(*x, &mut |buf| {
                    for (o, &m) in buf.iter_mut().zip(map) {
                        *o += g[m] * inv;
                    }
                })
            }
            Op::Sum(x) => acc(*x, &mut |buf| buf.iter_mut().for_each(|o| *o += g[0])),
            Op::SelectTime { x, t } => {
                let s = &nodes[x.0].shape;
                let (b, tt, d) = (s[0], s[1], s[2]);
                acc(*x, &mut |buf| {
                    for bi in 0..b {
                        let off = (bi * tt + t) * d;
                        add_into(&mut buf[off..off + d], &g[bi * d..(bi + 1) * d]);
                    }
                })
            }
            Op::StackTime(steps) => {
                let (b, t, d) = (node.shape[0], node.shape[1], node.shape[2]);
                for (ti, &v) in steps.iter().enumerate() {
                    acc(v, &mut |buf| {
                        for bi in 0..b {
                            let src = (bi * t + ti) * d;
                            add_into(&mut buf[bi * d..(bi + 1) * d], &g[src..src + d]);
                        }
                    });
                }
            }
            Op::SliceLast { x, start } => {
                let n = *nodes[x.0].shape.last().unwrap();
                let len = *node.shape.last().unwrap();
                acc(*x, &mut |buf| {
                    for (brow, grow) in buf.chunks_mut(n).zip(g.chunks(len)) {
                        add_into(&mut brow[*start..*start + len], grow);
                    }
                })
            }
            Op::RepeatLast { x, n } => acc(*x, &mut |buf| {
                for (o, grow) in buf.iter_mut().zip(g.chunks(*n)) {
                    *o += grow.iter().sum::<f64>();
                }
            }),
        }
    }
}

fn add_into(buf: &mut [f64], g: &[f64]) {
    buf.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.leaf(&t(vec![2, 2], vec![1., 0., 0., 1.]));
        let m = tape.leaf(&t(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]));
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p), tape.value(m));
    }

    #[test]
    fn hand_matmul() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(vec![2, 2], vec![1., 2., 3., 4.]));
        let b = tape.leaf(&t(vec![2, 1], vec![1., 1.]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(p), &[2, 1]);
        assert_eq!(tape.value(p), &[3., 7.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::zeros(vec![4]));
        let s = tape.sigmoid(z);
        let h = tape.tanh(z);
        assert!(tape.value(s).iter().all(|&v| v == 0.5));
        assert!(tape.value(h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![3]));
        let s = tape.softmax(x, 0).unwrap();
        for &v in tape.value(s) {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let y = tape.leaf(&t(vec![2], vec![1., 2.]));
        let s = tape.softmax(y, 0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(tape.value(s)[0], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(tape.value(s)[1], e / (1.0 + e), epsilon = 1e-15);
        assert!((tape.value(s)[0] - 0.26894).abs() < 1e-5);
        assert!((tape.value(s)[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2, 3], vec![0.1, -2.0, 3.0, 699.0, -699.0, 0.0]));
        let shifted = tape.leaf(&t(vec![2, 3], vec![5.1, 3.0, 8.0, 699.0, -699.0, 0.0]));
        let a = tape.softmax(x, 1).unwrap();
        let b = tape.softmax(shifted, 1).unwrap();
        for (p, q) in tape.value(a)[..3].iter().zip(&tape.value(b)[..3]) {
            assert_relative_eq!(p, q, epsilon = 1e-15);
        }
        assert!(tape.value(a).iter().all(|v| v.is_finite()));
        for row in tape.value(a).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_bad_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![3]));
        assert!(tape.softmax(x, 1).is_err());
    }

    #[test]
    fn mean_values_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![2., 4.]).with_grad());
        let m = tape.mean(x, &[0]).unwrap();
        assert_eq!(tape.value(m), &[3.0]);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn mean_over_middle_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2, 2, 2], (0..8).map(f64::from).collect()));
        let m = tape.mean(x, &[0, 1]).unwrap();
        assert_eq!(tape.shape(m), &[2]);
        assert_eq!(tape.value(m), &[3.0, 4.0]);
        let m1 = tape.mean(x, &[1]).unwrap();
        assert_eq!(tape.shape(m1), &[2, 2]);
        assert_eq!(tape.value(m1), &[1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn mean_over_empty_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![0, 3]));
        assert!(tape.mean(x, &[0]).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![1., -2., 5.]).with_grad());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1., 1., 1.]);
    }

    #[test]
    fn reuse_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![3], vec![1., -2., 5.]).with_grad());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2., 2., 2.]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![3]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2], vec![1., 2.]).with_grad());
        let c = tape.constant(vec![2], vec![3., 4.]).unwrap();
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3., 4.]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn accumulate_into_tensor() {
        let mut w = t(vec![2], vec![1., 2.]).with_grad();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.leaf(&w);
            let s = tape.sum(x);
            let g = tape.backward(s).unwrap();
            g.accumulate_into(x, &mut w);
        }
        assert_eq!(w.grad().unwrap(), &[2., 2.]);
        w.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn time_ops_round_trip() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2, 3, 2], (0..12).map(f64::from).collect()));
        let steps: Vec<Var> = (0..3).map(|ti| tape.select_time(x, ti).unwrap()).collect();
        assert_eq!(tape.value(steps[1]), &[2., 3., 8., 9.]);
        let back = tape.stack_time(&steps).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
    }

    #[test]
    fn slice_and_repeat() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(vec![2, 4], (0..8).map(f64::from).collect()));
        let s = tape.slice_last(x, 1, 2).unwrap();
        assert_eq!(tape.value(s), &[1., 2., 5., 6.]);
        let r = tape.repeat_last(s, 2);
        assert_eq!(tape.shape(r), &[2, 2, 2]);
        assert_eq!(tape.value(r), &[1., 1., 2., 2., 5., 5., 6., 6.]);
        assert!(tape.slice_last(x, 3, 2).is_err());
    }

    #[test]
    fn bias_broadcast_shape_checked() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![2]));
        assert!(tape.add_bias(x, b).is_err());
        let b3 = tape.leaf(&t(vec![3], vec![1., 2., 3.]));
        let y = tape.add_bias(x, b3).unwrap();
        assert_eq!(tape.value(y), &[1., 2., 3., 1., 2., 3.]);
    }
}
