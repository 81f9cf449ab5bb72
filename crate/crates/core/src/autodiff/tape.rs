use super::kernels::{self, ConvGeom};
use super::tensor::axis_split;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddAlong { a: Var, b: Var, axis: usize },
    MulAlong { a: Var, s: Var, axis: usize },
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar { a: Var, s: Var },
    MatMul { a: Var, b: Var, m: usize, n: usize, k: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Clip01(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather { a: Var, axis: usize, index: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// DAG, so backward is a single reverse sweep. A tape supports exactly one
/// backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient matches value"))
    }

    /// Gradient of `v`, zeros when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push_raw(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        value.zero_grad();
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        value.check_finite(name)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, TensorError> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    fn along_check(&self, op: &'static str, a: Var, b: Var, axis: usize) -> Result<(usize, usize, usize), TensorError> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(TensorError::Shape { op, detail: format!("axis {axis} on rank {}", x.rank()) });
        }
        let (outer, n, inner) = x.axis_split(axis);
        if self.value(b).shape() != [n] {
            return Err(TensorError::Shape {
                op,
                detail: format!("vector {:?} along axis {axis} of {:?}", self.value(b).shape(), x.shape()),
            });
        }
        Ok((outer, n, inner))
    }

    /// `a + b` with `b` broadcast along `axis` (bias add).
    pub fn add_along(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, n, inner) = self.along_check("add_along", a, b, axis)?;
        let (x, v) = (self.value(a), self.value(b).data());
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for i in 0..n {
                let s = (o * n + i) * inner;
                data[s..s + inner].iter_mut().for_each(|d| *d += v[i]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add_along", out, Op::AddAlong { a, b, axis }, &[a, b])
    }

    /// Scales each slice of `a` along `axis` by the matching entry of `s`.
    pub fn mul_along(&mut self, a: Var, s: Var, axis: usize) -> Result<Var, TensorError> {
        let (outer, n, inner) = self.along_check("mul_along", a, s, axis)?;
        let (x, v) = (self.value(a), self.value(s).data());
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for i in 0..n {
                let st = (o * n + i) * inner;
                data[st..st + inner].iter_mut().for_each(|d| *d *= v[i]);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul_along", out, Op::MulAlong { a, s, axis }, &[a, s])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("scale", a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.unary("add_scalar", a, |v| v + c, Op::AddScalar(a))
    }

    /// `a * s` for a one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(TensorError::Shape { op: "mul_scalar", detail: format!("{:?} is not a scalar", self.shape(s)) });
        }
        let c = self.scalar_value(s);
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul_scalar", out, Op::MulScalar { a, s }, &[a, s])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                detail: format!("{:?} · {:?}", x.shape(), y.shape()),
            });
        }
        let (m, n, k) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let out = Tensor::new(vec![m, k], kernels::matmul(x.data(), y.data(), m, n, k))?;
        self.push("matmul", out, Op::MatMul { a, b, m, n, k }, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.rank() != 2 {
            return Err(TensorError::Shape { op: "transpose", detail: format!("rank {}", x.rank()) });
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let out = Tensor::new(vec![cols, rows], kernels::transpose(x.data(), rows, cols))?;
        self.push("transpose", out, Op::Transpose { a, rows, cols }, &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rank() != 4 || wv.rank() != 4 || xv.shape()[1] != wv.shape()[1] {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("input {:?} kernel {:?}", xv.shape(), wv.shape()),
            });
        }
        let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (d, kh, kw) = (wv.shape()[0], wv.shape()[2], wv.shape()[3]);
        let (Some(oh), Some(ow)) = (
            ConvGeom::out_extent(h, kh, stride, padding),
            ConvGeom::out_extent(wd, kw, stride, padding),
        ) else {
            return Err(TensorError::Config(format!(
                "conv2d output extent not integral: {h}×{wd} input, {kh}×{kw} kernel, stride {stride}, padding {padding}"
            )));
        };
        let geom = ConvGeom { n, c, h, w: wd, d, kh, kw, stride, padding, oh, ow };
        let out = Tensor::new(vec![n, d, oh, ow], kernels::conv2d(xv.data(), wv.data(), &geom))?;
        self.push("conv2d", out, Op::Conv2d { x, w, geom }, &[x, w])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("relu", a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        if let Some((index, &value)) = self.value(a).data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::Domain { op: "log", index, value });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// `min(1, max(0, x))`; gradient passes only strictly inside (0, 1).
    pub fn clip01(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("clip01", a, |v| v.clamp(0.0, 1.0), Op::Clip01(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(TensorError::Shape { op: "mean", detail: "empty tensor".into() });
        }
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    fn rows(&self, a: Var) -> (usize, usize) {
        let x = self.value(a);
        let cols = x.shape().last().copied().unwrap_or(1);
        (x.len() / cols.max(1), cols)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.rows(a);
        let x = self.value(a);
        let mut data = x.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("softmax", out, Op::Softmax(a), &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.rows(a);
        let x = self.value(a);
        let mut data = x.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    /// Selects `index` along `axis`; indices may repeat.
    pub fn gather(&mut self, a: Var, axis: usize, index: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).select(axis, index)?;
        self.push("gather", out, Op::Gather { a, axis, index: index.to_vec() }, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        self.gather(a, 0, index)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Shape { op: "concat", detail: "no inputs".into() })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Shape { op: "concat", detail: format!("axis {axis} on rank {}", base.len()) });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape { op: "concat", detail: format!("{s:?} vs {base:?} on axis {axis}") });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let n = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Reverse sweep from scalar `out`. A tape may be swept only once.
    pub fn backward(&mut self, out: Var) -> Result<Gradients, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(out).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(out).to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].needs_grad {
                accumulate(&mut grads[v.0], self.nodes[v.0].value.len(), |b| f(b));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (x, z) = (val(*a), val(*b));
                acc(*a, &mut |d| d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] * z[k]));
                acc(*b, &mut |d| d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] * x[k]));
            }
            Op::AddAlong { a, b, axis } => {
                let (outer, n, inner) = self.nodes[a.0].value.axis_split(*axis);
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| {
                    for o in 0..outer {
                        for (j, dj) in d.iter_mut().enumerate().take(n) {
                            let s = (o * n + j) * inner;
                            *dj += g[s..s + inner].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::MulAlong { a, s, axis } => {
                let (outer, n, inner) = self.nodes[a.0].value.axis_split(*axis);
                let (x, sv) = (val(*a), val(*s));
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for j in 0..n {
                            let st = (o * n + j) * inner;
                            for r in st..st + inner {
                                d[r] += g[r] * sv[j];
                            }
                        }
                    }
                });
                acc(*s, &mut |d| {
                    for o in 0..outer {
                        for (j, dj) in d.iter_mut().enumerate().take(n) {
                            let st = (o * n + j) * inner;
                            *dj += (st..st + inner).map(|r| g[r] * x[r]).sum::<f64>();
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::MulScalar { a, s } => {
                let (x, c) = (val(*a), val(*s)[0]);
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
                acc(*s, &mut |d| d[0] += g.iter().zip(x).map(|(g, x)| g * x).sum::<f64>());
            }
            Op::MatMul { a, b, m, n, k } => {
                let (x, z) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    let ga = kernels::matmul_nt(g, z, *m, *k, *n);
                    d.iter_mut().zip(ga).for_each(|(d, v)| *d += v);
                });
                acc(*b, &mut |d| {
                    let gb = kernels::matmul_tn(x, g, *m, *n, *k);
                    d.iter_mut().zip(gb).for_each(|(d, v)| *d += v);
                });
            }
            Op::Transpose { a, rows, cols } => {
                let gt = kernels::transpose(g, *cols, *rows);
                acc(*a, &mut |d| d.iter_mut().zip(&gt).for_each(|(d, v)| *d += v));
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = kernels::conv2d_backward(val(*x), val(*w), g, geom);
                acc(*x, &mut |d| d.iter_mut().zip(&dx).for_each(|(d, v)| *d += v));
                acc(*w, &mut |d| d.iter_mut().zip(&dw).for_each(|(d, v)| *d += v));
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] * y[k] * (1.0 - y[k]))
            }),
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |d| d.iter_mut().enumerate().for_each(|(k, d)| if x[k] > 0.0 { *d += g[k] }))
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] * (1.0 - y[k] * y[k]))
            }),
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, &mut |d| d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] / x[k]))
            }
            Op::Exp(a) => acc(*a, &mut |d| d.iter_mut().enumerate().for_each(|(k, d)| *d += g[k] * y[k])),
            Op::Clip01(a) => {
                let x = val(*a);
                acc(*a, &mut |d| {
                    d.iter_mut().enumerate().for_each(|(k, d)| {
                        if x[k] > 0.0 && x[k] < 1.0 {
                            *d += g[k]
                        }
                    })
                })
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Softmax(a) => {
                let (rows, cols) = self.rows(*a);
                acc(*a, &mut |d| {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let dot: f64 = span.clone().map(|k| g[k] * y[k]).sum();
                        for k in span {
                            d[k] += y[k] * (g[k] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let (rows, cols) = self.rows(*a);
                acc(*a, &mut |d| {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let total: f64 = span.clone().map(|k| g[k]).sum();
                        for k in span {
                            d[k] += g[k] - y[k].exp() * total;
                        }
                    }
                })
            }
            Op::Gather { a, axis, index } => {
                let (outer, n, inner) = self.nodes[a.0].value.axis_split(*axis);
                acc(*a, &mut |d| {
                    let m = index.len();
                    for o in 0..outer {
                        for (p, &src) in index.iter().enumerate() {
                            let from = (o * m + p) * inner;
                            let to = (o * n + src) * inner;
                            for r in 0..inner {
                                d[to + r] += g[from + r];
                            }
                        }
                    }
                })
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = node.value.axis_split(*axis);
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.shape()[*axis];
                    acc(*p, &mut |d| {
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            let to = o * n * inner;
                            for r in 0..n * inner {
                                d[to + r] += g[from + r];
                            }
                        }
                    });
                    offset += n;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let col = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(r, col).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
        assert!(matches!(tape.matmul(r, r), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn conv_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);

        let input: Vec<f64> = (0..9).map(|v| v as f64 * 0.5 - 1.0).collect();
        let x = tape.constant(t(&[1, 1, 3, 3], &input));
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let w = tape.constant(t(&[1, 1, 3, 3], &delta));
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), input.as_slice());

        let x4 = tape.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let w3 = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
        assert!(matches!(tape.conv2d(x4, w3, 2, 0), Err(TensorError::Config(_))));
    }

    #[test]
    fn clip01_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-0.1, 0.5, 1.1]));
        let y = tape.clip01(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.5, 1.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_and_softmax_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.scalar_value(s), 0.5);
        let row = tape.constant(Tensor::full(vec![1, 4], 3.7));
        let p = tape.softmax(row).unwrap();
        assert_eq!(tape.value(p).data(), &[0.25; 4]);
    }

    #[test]
    fn log_domain_error_reports_location() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, -3.0]));
        match tape.log(x) {
            Err(TensorError::Domain { op: "log", index: 2, value }) => assert_eq!(value, -3.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1000.0]));
        assert!(matches!(tape.exp(x), Err(TensorError::NonFinite { op: "exp", index: 1 })));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y).unwrap();
        let before = tape.value(y).clone();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
        assert!(matches!(tape.backward(s), Err(TensorError::BackwardTwice)));
        assert_eq!(tape.value(y), &before);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0]));
        let c = tape.constant(Tensor::vector(vec![3.0]));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn concat_and_gather_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = tape.gather_rows(c, &[1, 1]).unwrap();
        assert_eq!(tape.value(r).data(), &[2.0, 5.0, 6.0, 2.0, 5.0, 6.0]);
    }
}
