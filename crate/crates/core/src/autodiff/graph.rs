//! Tape-based reverse-mode differentiation over matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it once in reverse.

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Graph`].
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
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    MulConst(Var, Vec<f64>),
    MatMulConst(Var, Tensor),
    Sum(Var),
    MeanRows(Var),
    SumCols(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` if it was unreachable.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: vec![a.rows(), a.cols()],
        right: vec![b.rows(), b.cols()],
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.into_matrix(),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(mismatch("matmul", va, vb));
        }
        let out = matmul_raw(va, vb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · m` for a constant matrix `m` that is not on the tape.
    pub fn matmul_const(&mut self, a: Var, m: &Tensor) -> Result<Var, AutodiffError> {
        let va = self.value(a);
        if va.cols() != m.rows() {
            return Err(mismatch("matmul_const", va, m));
        }
        let out = matmul_raw(va, m);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MatMulConst(a, m.clone().into_matrix()), rg))
    }

    /// Adds the `1×m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(mismatch("add_row", va, vb));
        }
        let c = va.cols();
        let mut out = va.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += vb.data()[i % c];
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() {
            return Err(mismatch(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::matrix(va.rows(), va.cols(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.needs(&[a]);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax(v.row(i)));
        }
        let rg = self.needs(&[a]);
        self.push(Tensor::matrix(r, c, data), Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = v.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let rg = self.needs(&[a]);
        self.push(Tensor::matrix(r, c, data), Op::LogSoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                index: start + len,
                bound: v.cols(),
            });
        }
        let r = v.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row(i)[start..start + len]);
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(r, len, data), Op::SliceCols(a, start), rg))
    }

    /// Gather rows by index (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        let c = v.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= v.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    index: i,
                    bound: v.rows(),
                });
            }
            data.extend_from_slice(v.row(i));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(idx.len(), c, data), Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// `out[i] = a[i, idx[i]]`, an `n×1` column.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        if idx.len() != v.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick_per_row",
                left: vec![v.rows(), v.cols()],
                right: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            if j >= v.cols() {
                return Err(AutodiffError::IndexOutOfRange {
                    index: j,
                    bound: v.cols(),
                });
            }
            data.push(v.get(i, j));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(idx.len(), 1, data), Op::PickPerRow(a, idx.to_vec()), rg))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        if v.dims() != c.dims() {
            return Err(mismatch("mul_const", v, c));
        }
        let data = v.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::matrix(v.rows(), v.cols(), data);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MulConst(a, c.data().to_vec()), rg))
    }

    /// Sum of all elements, `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means, `1×cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.needs(&[a]);
        self.push(Tensor::matrix(1, c, out), Op::MeanRows(a), rg)
    }

    /// Row sums, `rows×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let r = v.rows();
        let data = (0..r).map(|i| v.row(i).iter().sum()).collect();
        let rg = self.needs(&[a]);
        self.push(Tensor::matrix(r, 1, data), Op::SumCols(a), rg)
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // keep gradients only for nodes that can carry them
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => {
                let v = &self.nodes[var.0].value;
                *slot = Some(Tensor::matrix(v.rows(), v.cols(), delta));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, matmul_bt(g, vb).into_data());
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul_at(va, g).into_data());
                }
            }
            Op::MatMulConst(a, m) => {
                self.accumulate(grads, *a, matmul_bt(g, m).into_data());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                if self.requires_grad(*b) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (i, x) in gd.iter().enumerate() {
                        gb[i % c] += x;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, zip_map(gd, vb, |g, y| g * y));
                self.accumulate(grads, *b, zip_map(gd, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, zip_map(gd, vb, |g, y| g / y));
                let gb = gd.iter().zip(va).zip(vb).map(|((g, x), y)| -g * x / (y * y)).collect();
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, gd.iter().map(|x| c * x).collect()),
            Op::Offset(a) => self.accumulate(grads, *a, gd.to_vec()),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, zip_map(gd, va, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(gd, out, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(gd, out, |g, y| g * y * (1.0 - y))),
            Op::Log(a) => {
                let va = self.value(*a).data();
                self.accumulate(grads, *a, zip_map(gd, va, |g, x| g / x));
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).data();
                let d = zip_map(gd, va, |g, x| if x > *lo && x < *hi { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let c = g.cols();
                let mut d = vec![0.0; gd.len()];
                for i in 0..g.rows() {
                    let (gr, yr) = (&gd[i * c..(i + 1) * c], &out[i * c..(i + 1) * c]);
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let c = g.cols();
                let mut d = vec![0.0; gd.len()];
                for i in 0..g.rows() {
                    let (gr, yr) = (&gd[i * c..(i + 1) * c], &out[i * c..(i + 1) * c]);
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        d[i * c + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let (r, c) = g.dims();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            d.extend_from_slice(&gd[i * c + offset..i * c + offset + pc]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, gd[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let (r, c) = va.dims();
                let len = g.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, idx) => {
                let va = self.value(*a);
                let c = va.cols();
                let mut d = vec![0.0; va.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gd[k * c + j];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::PickPerRow(a, idx) => {
                let va = self.value(*a);
                let c = va.cols();
                let mut d = vec![0.0; va.len()];
                for (i, &j) in idx.iter().enumerate() {
                    d[i * c + j] = gd[i];
                }
                self.accumulate(grads, *a, d);
            }
            Op::MulConst(a, m) => self.accumulate(grads, *a, zip_map(gd, m, |g, y| g * y)),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let (r, c) = va.dims();
                let mut d = Vec::with_capacity(r * c);
                for _ in 0..r {
                    d.extend(gd.iter().map(|x| x / r as f64));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumCols(a) => {
                let va = self.value(*a);
                let (r, c) = va.dims();
                let mut d = Vec::with_capacity(r * c);
                for &gi in gd.iter().take(r) {
                    d.extend(std::iter::repeat_n(gi, c));
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `a · b`
fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = a.dims();
    let m = b.cols();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in orow.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                *o += x * y;
            }
        }
    }
    Tensor::matrix(n, m, out)
}

/// `g · bᵀ`
fn matmul_bt(g: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = g.dims();
    let k = b.rows();
    let (gd, bd) = (g.data(), b.data());
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &gd[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = grow.iter().zip(&bd[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(n, k, out)
}

/// `aᵀ · g`
fn matmul_at(a: &Tensor, g: &Tensor) -> Tensor {
    let (n, k) = a.dims();
    let m = g.cols();
    let (ad, gd) = (a.data(), g.data());
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &gd[i * m..(i + 1) * m];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, y) in out[p * m..(p + 1) * m].iter_mut().zip(grow) {
                *o += x * y;
            }
        }
    }
    Tensor::matrix(k, m, out)
}
