//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value, so node ids are
//! already a topological order and the reverse pass is a single backwards
//! sweep. Nodes built only from constants carry no gradient.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    Silu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Broadcast(Var),
    MulScalar(Var, Var),
    ConcatCols(Var, Var),
    StopGradient,
    Index(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a reverse pass: `∂root/∂node` for every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` is not an ancestor of the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(v, Op::Mean(a), rg)
    }

    /// `[rows, cols] -> [rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let data = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let v = Tensor::matrix(r, 1, data);
        let rg = self.rg(a);
        self.push(v, Op::RowSum(a), rg)
    }

    /// Repeats a single-element tensor into `shape`.
    pub fn broadcast(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape("broadcast source must hold one element".into()));
        }
        let v = Tensor::full(shape, self.value(s).item());
        let rg = self.rg(s);
        Ok(self.push(v, Op::Broadcast(s), rg))
    }

    /// Tensor times a single-element node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape("mul_scalar factor must hold one element".into()));
        }
        let c = self.value(s).item();
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(v, Op::MulScalar(a, s), rg))
    }

    /// `a: [rows, n] + b: [n]` with `b` repeated over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        if tb.numel() != n || ta.shape().len() != 2 {
            return Err(Error::Shape(format!("add_row: {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut v = ta.clone();
        for row in v.data_mut().chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::AddRow(a, b), rg))
    }

    fn matmul_value(&self, a: Var, b: Var) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!("matmul: {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), &mut out, false);
        Ok(Tensor::matrix(m, n, out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.matmul_value(a, b)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `x · w + b` for `x: [rows, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let mut v = self.matmul_value(x, w)?;
        let n = v.cols();
        let tb = self.value(b);
        if tb.numel() != n {
            return Err(Error::Shape(format!("affine bias {:?} for {n} outputs", tb.shape())));
        }
        for row in v.data_mut().chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(v, Op::Affine(x, w, b), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::Shape(format!("concat: {:?} | {:?}", ta.shape(), tb.shape())));
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, ca + cb, data), Op::ConcatCols(a, b), rg))
    }

    /// Identity on the forward pass; contributes nothing on the reverse pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::StopGradient, false)
    }

    /// Element `i` of a tensor as a scalar node.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.numel() {
            return Err(Error::Shape(format!("index {i} into {:?}", t.shape())));
        }
        let v = Tensor::scalar(t.data()[i]);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Index(a, i), rg))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.numel() != 1 || rv.shape().len() > 2 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if !rv.is_finite() {
            return Err(Error::NonFinite("backward root".into()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of node {i}")));
            }
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        // Only differentiable nodes report a gradient.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let y = node.value.data();
        match node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * vb[j];
                    }
                });
                acc(b, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * va[j];
                    }
                });
            }
            Op::Neg(a) => acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g)),
            Op::Scale(a, c) => acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::AddConst(a) => acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
            Op::AddRow(a, b) => {
                acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                let n = self.nodes[b.0].value.numel();
                acc(b, &|s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::MatMul(a, b) | Op::Affine(a, b, _) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G · Bᵀ
                acc(a, &|s| gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), s, true));
                // dB = Aᵀ · G
                acc(b, &|s| gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), s, true));
                if let Op::Affine(_, _, bias) = node.op {
                    acc(bias, &|s| {
                        for row in g.chunks(n) {
                            s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                        }
                    });
                }
            }
            Op::Tanh(a) => acc(a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }),
            Op::Softplus(a) => {
                let x = val(a);
                acc(a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * sigmoid(x[j]);
                    }
                })
            }
            Op::Sigmoid(a) => acc(a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }),
            Op::Silu(a) => {
                let x = val(a);
                acc(a, &|s| {
                    for j in 0..s.len() {
                        let sg = sigmoid(x[j]);
                        s[j] += g[j] * sg * (1.0 + x[j] * (1.0 - sg));
                    }
                })
            }
            Op::Exp(a) => acc(a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * y[j];
                }
            }),
            Op::Log(a) => {
                let x = val(a);
                acc(a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / x[j];
                    }
                })
            }
            Op::Square(a) => {
                let x = val(a);
                acc(a, &|s| {
                    for j in 0..s.len() {
                        s[j] += 2.0 * x[j] * g[j];
                    }
                })
            }
            Op::Sum(a) => acc(a, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                acc(a, &|s| s.iter_mut().for_each(|s| *s += g[0] / n))
            }
            Op::RowSum(a) => {
                let c = self.nodes[a.0].value.cols();
                acc(a, &|s| {
                    for (row, gi) in s.chunks_mut(c).zip(g) {
                        row.iter_mut().for_each(|s| *s += gi);
                    }
                })
            }
            Op::Broadcast(a) => {
                let total: f64 = g.iter().sum();
                acc(a, &|s| s[0] += total)
            }
            Op::MulScalar(a, sc) => {
                let c = val(sc)[0];
                let x = val(a);
                acc(a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g));
                let dot: f64 = x.iter().zip(g).map(|(x, g)| x * g).sum();
                acc(sc, &|s| s[0] += dot);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.nodes[a.0].value.cols(), self.nodes[b.0].value.cols());
                acc(a, &|s| {
                    for (dst, src) in s.chunks_mut(ca).zip(g.chunks(ca + cb)) {
                        dst.iter_mut().zip(&src[..ca]).for_each(|(d, g)| *d += g);
                    }
                });
                acc(b, &|s| {
                    for (dst, src) in s.chunks_mut(cb).zip(g.chunks(ca + cb)) {
                        dst.iter_mut().zip(&src[ca..]).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Index(a, i) => acc(a, &|s| s[i] += g[0]),
        }
        Ok(())
    }
}
