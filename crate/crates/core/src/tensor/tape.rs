//! Append-only reverse-mode tape over dense matrices.
//!
//! Every operation pushes one node holding its forward value and the ids of
//! its parents. Because parents always precede children, insertion order is
//! a topological order and [`Tape::backward`] is a single reverse sweep.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&Matrix) -> Vec<Matrix> + Send + Sync>;

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Hadamard(Tensor, Tensor),
    MulCol(Tensor, Tensor),
    MulScalar(Tensor, Tensor),
    DivScalar(Tensor, Tensor),
    Scale(Tensor, f64),
    AddConst(Tensor),
    Transpose(Tensor),
    Relu(Tensor),
    Tanh(Tensor),
    Sqrt(Tensor),
    Powf(Tensor, f64),
    Log(Tensor),
    RowSoftmax(Tensor),
    LogSoftmax(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    RowSums(Tensor),
    ColSums(Tensor),
    Trace(Tensor),
    ConcatCols(Vec<Tensor>),
    ConcatRows(Vec<Tensor>),
    SliceRows(Tensor, Vec<usize>),
    ScatterRows(Tensor, Vec<usize>),
    Custom(Vec<Tensor>, BackwardFn),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by tensor handle.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.0).and_then(Option::as_ref)
    }

    /// Gradient for `t`, or zeros of its shape if the loss does not reach it.
    pub fn get_or_zeros(&self, t: Tensor) -> Matrix {
        match self.get(t) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[t.0];
                Matrix::zeros(r, c)
            }
        }
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

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.shape()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].needs_grad
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Tensor(self.nodes.len() - 1)
    }

    /// A differentiable leaf (parameter or input under test).
    pub fn variable(&mut self, value: Matrix) -> Tensor {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Tensor> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {name}"
            )));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Hadamard(a, b)
            | Op::MulCol(a, b)
            | Op::MulScalar(a, b)
            | Op::DivScalar(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sqrt(a)
            | Op::Powf(a, _)
            | Op::Log(a)
            | Op::RowSoftmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::ColSums(a)
            | Op::Trace(a)
            | Op::SliceRows(a, _)
            | Op::ScatterRows(a, _) => self.requires_grad(*a),
            Op::ConcatCols(ts) | Op::ConcatRows(ts) | Op::Custom(ts, _) => {
                ts.iter().any(|t| self.requires_grad(*t))
            }
        };
        // Purely constant subexpressions need no parent links.
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Tensor(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn is_scalar(&self, op: &'static str, s: Tensor) -> Result<()> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim(op, self.shape(s), (1, 1)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// `a + 1·row`, broadcasting a `1×d` row over every row of `a`.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        let (n, d) = self.shape(a);
        if self.shape(row) != (1, d) {
            return Err(Error::dim("add_row", (n, d), self.shape(row)));
        }
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..n {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row), "add_row")
    }

    pub fn hadamard(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("hadamard", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Hadamard(a, b), "hadamard")
    }

    /// Scales row `i` of `a` by `col[i]`, where `col` is `n×1`.
    pub fn mul_col(&mut self, a: Tensor, col: Tensor) -> Result<Tensor> {
        let (n, d) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(Error::dim("mul_col", (n, d), self.shape(col)));
        }
        let c = self.value(col).as_slice().to_vec();
        let mut v = self.value(a).clone();
        for (i, s) in c.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        self.push(v, Op::MulCol(a, col), "mul_col")
    }

    pub fn mul_scalar(&mut self, a: Tensor, s: Tensor) -> Result<Tensor> {
        self.is_scalar("mul_scalar", s)?;
        let c = self.value(s).item();
        let v = self.value(a).scale(c);
        self.push(v, Op::MulScalar(a, s), "mul_scalar")
    }

    pub fn div_scalar(&mut self, a: Tensor, s: Tensor) -> Result<Tensor> {
        self.is_scalar("div_scalar", s)?;
        let c = self.value(s).item();
        if c == 0.0 {
            return Err(Error::Numeric("division by zero scalar".into()));
        }
        let v = self.value(a).map(|x| x / c);
        self.push(v, Op::DivScalar(a, s), "div_scalar")
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), "scale")
    }

    pub fn add_const(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a), "add_const")
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), "transpose")
    }

    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), "tanh")
    }

    pub fn sqrt(&mut self, a: Tensor) -> Result<Tensor> {
        if self.value(a).as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::Numeric("sqrt of negative value".into()));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), "sqrt")
    }

    pub fn powf(&mut self, a: Tensor, p: f64) -> Result<Tensor> {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::Powf(a, p), "powf")
    }

    pub fn log(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), "log")
    }

    pub fn row_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::RowSoftmax(a), "row_softmax")
    }

    pub fn log_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..x.rows() {
            let row = v.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|r| *r -= lse);
        }
        self.push(v, Op::LogSoftmax(a), "log_softmax")
    }

    pub fn sum(&mut self, a: Tensor) -> Result<Tensor> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Tensor) -> Result<Tensor> {
        let x = self.value(a);
        let count = x.rows() * x.cols();
        if count == 0 {
            return Err(Error::Empty("mean of empty tensor"));
        }
        let v = Matrix::scalar(x.sum() / count as f64);
        self.push(v, Op::Mean(a), "mean")
    }

    /// `n×1` vector of row sums.
    pub fn row_sums(&mut self, a: Tensor) -> Result<Tensor> {
        let v = Matrix::column(&self.value(a).row_sums());
        self.push(v, Op::RowSums(a), "row_sums")
    }

    /// `1×d` vector of column sums.
    pub fn col_sums(&mut self, a: Tensor) -> Result<Tensor> {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, r) in v.as_mut_slice().iter_mut().zip(x.row(i)) {
                *o += r;
            }
        }
        self.push(v, Op::ColSums(a), "col_sums")
    }

    pub fn trace(&mut self, a: Tensor) -> Result<Tensor> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(Error::dim("trace", (r, c), (c, r)));
        }
        let v = Matrix::scalar(self.value(a).trace());
        self.push(v, Op::Trace(a), "trace")
    }

    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                v.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).as_slice());
            rows += self.shape(p).0;
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Rows `idx` of `a`, in order.
    pub fn slice_rows(&mut self, a: Tensor, idx: &[usize]) -> Result<Tensor> {
        let (n, d) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "slice_rows index {bad} out of range for {n}x{d}"
            )));
        }
        let v = self.value(a).select_rows(idx);
        self.push(v, Op::SliceRows(a, idx.to_vec()), "slice_rows")
    }

    /// `n×d` matrix whose row `idx[j]` is row `j` of `a`; other rows are zero.
    pub fn scatter_rows(&mut self, a: Tensor, idx: &[usize], n: usize) -> Result<Tensor> {
        let (r, d) = self.shape(a);
        if r != idx.len() {
            return Err(Error::dim("scatter_rows", (r, d), (idx.len(), d)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "scatter_rows index {bad} out of range for {n} rows"
            )));
        }
        let src = self.value(a);
        let mut v = Matrix::zeros(n, d);
        for (j, &i) in idx.iter().enumerate() {
            for (o, s) in v.row_mut(i).iter_mut().zip(src.row(j)) {
                *o += s;
            }
        }
        self.push(v, Op::ScatterRows(a, idx.to_vec()), "scatter_rows")
    }

    /// Records an operation with a caller-supplied forward value and
    /// vector-Jacobian product. `backward` maps the upstream gradient to one
    /// gradient per parent, in order.
    pub fn custom(
        &mut self,
        parents: &[Tensor],
        value: Matrix,
        backward: impl Fn(&Matrix) -> Vec<Matrix> + Send + Sync + 'static,
    ) -> Result<Tensor> {
        self.push(
            value,
            Op::Custom(parents.to_vec(), Box::new(backward)),
            "custom",
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |t: Tensor, contrib: Matrix| {
            if !self.nodes[t.0].needs_grad {
                return;
            }
            match &mut grads[t.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |t: Tensor| &self.nodes[t.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if self.requires_grad(*b) {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.requires_grad(*row) {
                    let mut r = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in r.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(*row, r);
                }
            }
            Op::Hadamard(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::MulCol(a, col) => {
                let c = val(*col);
                if self.requires_grad(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s = c[(i, 0)];
                        ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(*a, ga);
                }
                if self.requires_grad(*col) {
                    let av = val(*a);
                    let gc = Matrix::from_fn(g.rows(), 1, |i, _| {
                        g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()
                    });
                    acc(*col, gc);
                }
            }
            Op::MulScalar(a, s) => {
                let sv = val(*s).item();
                acc(*a, g.scale(sv));
                let inner: f64 = g
                    .as_slice()
                    .iter()
                    .zip(val(*a).as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                acc(*s, Matrix::scalar(inner));
            }
            Op::DivScalar(a, s) => {
                let sv = val(*s).item();
                acc(*a, g.scale(1.0 / sv));
                let inner: f64 = g
                    .as_slice()
                    .iter()
                    .zip(val(*a).as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                acc(*s, Matrix::scalar(-inner / (sv * sv)));
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(&node.value, |x, y| if y > 0.0 { 0.5 * x / y } else { 0.0 }),
            ),
            Op::Powf(a, p) => acc(*a, g.zip_map(val(*a), |x, y| x * p * y.powf(p - 1.0))),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |x, y| x / y)),
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..y.cols() {
                        ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let total: f64 = g.row(i).iter().sum();
                    for j in 0..y.cols() {
                        ga[(i, j)] = g[(i, j)] - y[(i, j)].exp() * total;
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
            }
            Op::ColSums(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)]));
            }
            Op::Trace(a) => {
                let n = self.shape(*a).0;
                acc(*a, Matrix::identity(n).scale(g.item()));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.requires_grad(p) {
                        acc(p, Matrix::from_fn(r, c, |i, j| g[(i, offset + j)]));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.requires_grad(p) {
                        acc(p, Matrix::from_fn(r, c, |i, j| g[(offset + i, j)]));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for (j, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(j)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::ScatterRows(a, idx) => acc(*a, g.select_rows(idx)),
            Op::Custom(parents, backward) => {
                for (p, gp) in parents.iter().zip(backward(g)) {
                    acc(*p, gp);
                }
            }
        }
    }
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut v = x.clone();
    for i in 0..x.rows() {
        let row = v.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|r| *r = (*r - max).exp());
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|r| *r /= total);
    }
    v
}
