//! Tape-based reverse-mode differentiation over dense 2-D matrices.
//!
//! Every operation appends one node holding its forward value and enough
//! information to run its local backward rule. Nodes only ever reference
//! earlier nodes, so a single reverse sweep over the node list visits the
//! graph in reverse topological order.

use super::matrix::{dot, sq_dist, Matrix};
use super::special::{normal_cdf, normal_pdf};
use super::DiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// n×c plus a broadcast 1×c row.
    AddRow(Var, Var),
    /// Matrix times a 1×1 variable.
    MulScalar(Var, Var),
    /// Elementwise quotient of two same-shape matrices.
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    SqDist(Var, Var),
    Sum(Var),
    RowSums(Var),
    Trace(Var),
    Transpose(Var),
    NormalCdf(Var),
    /// Mean cross-entropy; stores the softmax probabilities and labels.
    CrossEntropy(Var, Matrix, Vec<usize>),
    /// Hard maximum over scalar inputs, gradient routed to `argmax`.
    MaxOf(Vec<Var>, usize),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Confined to a single thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn check_finite(op: &'static str, m: &Matrix) -> Result<(), DiffError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(DiffError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
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

    fn push(&mut self, op: &'static str, value: Matrix, node_op: Op, inputs: &[Var]) -> Result<Var, DiffError> {
        check_finite(op, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var, DiffError> {
        check_finite("leaf", &value)?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Result<Var, DiffError> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix) -> Result<Var, DiffError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64, DiffError> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        same_shape("div", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push("div", value, Op::Div(a, b), &[a, b])
    }

    /// Adds a 1×c row vector to every row of an n×c matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "add_row",
                lhs: am.shape(),
                rhs: rm.shape(),
            });
        }
        let mut value = am.clone();
        let r = rm.data().to_vec();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every entry by the 1×1 variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        let k = self.value(s).item()?;
        let value = self.value(a).map(|x| x * k);
        self.push("mul_scalar", value, Op::MulScalar(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(|x| x * k);
        self.push("scale", value, Op::Scale(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(|x| x + k);
        self.push("add_const", value, Op::AddConst(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", value, Op::Exp(a), &[a])
    }

    /// Elementwise square root; inputs must be strictly positive.
    pub fn sqrt(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(DiffError::InvalidArgument(
                "sqrt of a non-positive value".into(),
            ));
        }
        let value = self.value(a).map(f64::sqrt);
        self.push("sqrt", value, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).map(|x| x * x);
        self.push("square", value, Op::Square(a), &[a])
    }

    /// `max(x, slope·x)` elementwise; the derivative at exactly 0 is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, DiffError> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(DiffError::InvalidArgument(format!(
                "leaky relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), &[a])
    }

    /// Squared Euclidean distances between the rows of `x` (n×d) and `y` (m×d).
    pub fn pairwise_sqdist(&mut self, x: Var, y: Var) -> Result<Var, DiffError> {
        let (xm, ym) = (self.value(x), self.value(y));
        if xm.cols() != ym.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "pairwise_sqdist",
                lhs: xm.shape(),
                rhs: ym.shape(),
            });
        }
        let mut value = Matrix::zeros(xm.rows(), ym.rows());
        for i in 0..xm.rows() {
            let xi = xm.row(i);
            for j in 0..ym.rows() {
                value.set(i, j, sq_dist(xi, ym.row(j)));
            }
        }
        self.push("pairwise_sqdist", value, Op::SqDist(x, y), &[x, y])
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// n×c → n×1 sums along each row.
    pub fn row_sums(&mut self, a: Var) -> Result<Var, DiffError> {
        let m = self.value(a);
        let sums: Vec<f64> = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let value = Matrix::column(&sums);
        self.push("row_sums", value, Op::RowSums(a), &[a])
    }

    pub fn trace(&mut self, a: Var) -> Result<Var, DiffError> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(DiffError::ShapeMismatch {
                op: "trace",
                lhs: m.shape(),
                rhs: m.shape(),
            });
        }
        let value = Matrix::scalar(m.trace());
        self.push("trace", value, Op::Trace(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// Standard normal CDF elementwise.
    pub fn normal_cdf(&mut self, a: Var) -> Result<Var, DiffError> {
        let value = self.value(a).map(normal_cdf);
        self.push("normal_cdf", value, Op::NormalCdf(a), &[a])
    }

    /// Mean negative log-softmax of the true class over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, DiffError> {
        let lm = self.value(logits);
        let (n, c) = lm.shape();
        if labels.len() != n {
            return Err(DiffError::InvalidArgument(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(DiffError::InvalidArgument("cross entropy of an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DiffError::LabelOutOfRange { label: bad, classes: c });
        }
        let mut probs = Matrix::zeros(n, c);
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = lm.row(i);
            let (arg, max) = row
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, v)| (v - max).exp())
                .sum();
            let denom = 1.0 + rest;
            loss -= row[label] - max - rest.ln_1p();
            for (j, v) in row.iter().enumerate() {
                probs.set(i, j, (v - max).exp() / denom);
            }
        }
        let value = Matrix::scalar(loss / n as f64);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy(logits, probs, labels.to_vec()),
            &[logits],
        )
    }

    /// Hard maximum of 1×1 nodes. Ties go to the earliest input.
    pub fn max_of(&mut self, items: &[Var]) -> Result<Var, DiffError> {
        if items.is_empty() {
            return Err(DiffError::InvalidArgument("max over an empty list".into()));
        }
        let mut best = 0;
        let mut best_val = self.scalar(items[0])?;
        for (i, &v) in items.iter().enumerate().skip(1) {
            let x = self.scalar(v)?;
            if x > best_val {
                best = i;
                best_val = x;
            }
        }
        self.push(
            "max_of",
            Matrix::scalar(best_val),
            Op::MaxOf(items.to_vec(), best),
            items,
        )
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let m = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= m.rows()) {
            return Err(DiffError::InvalidArgument(format!(
                "row index {bad} out of range for {} rows",
                m.rows()
            )));
        }
        let value = m.select_rows(indices);
        self.push("select_rows", value, Op::SelectRows(a, indices.to_vec()), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::vstack(&mats)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        self.value(loss).item()?;
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&g, 1.0),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<(), DiffError> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(bv, |x, y| x / y));
                let gb = g
                    .zip_map(av, |x, y| x * y)
                    .zip_map(bv, |x, y| -x / (y * y));
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (acc, x) in gr.data_mut().iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                self.accumulate(grads, *row, gr);
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s).item()?;
                self.accumulate(grads, *a, g.map(|x| x * k));
                let gs = dot(g.data(), self.value(*a).data());
                self.accumulate(grads, *s, Matrix::scalar(gs));
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * y));
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, g.zip_map(&node.value, |x, y| 0.5 * x / y));
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y));
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let ga = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { slope * x });
                self.accumulate(grads, *a, ga);
            }
            Op::SqDist(x, y) => {
                let (xm, ym) = (self.value(*x), self.value(*y));
                let d = xm.cols();
                if self.requires_grad(*x) {
                    // dD_ij/dx_i = 2 (x_i − y_j)
                    let mut gx = Matrix::zeros(xm.rows(), d);
                    for i in 0..xm.rows() {
                        let xi = xm.row(i);
                        let gi = g.row(i);
                        let row_sum: f64 = gi.iter().sum();
                        let out = gx.row_mut(i);
                        for (k, o) in out.iter_mut().enumerate() {
                            *o = 2.0 * row_sum * xi[k];
                        }
                        for (j, &gij) in gi.iter().enumerate() {
                            if gij == 0.0 {
                                continue;
                            }
                            for (o, yk) in out.iter_mut().zip(ym.row(j)) {
                                *o -= 2.0 * gij * yk;
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*y) {
                    let mut gy = Matrix::zeros(ym.rows(), d);
                    let col_sums: Vec<f64> = (0..ym.rows())
                        .map(|j| (0..xm.rows()).map(|i| g.get(i, j)).sum())
                        .collect();
                    for j in 0..ym.rows() {
                        let out = gy.row_mut(j);
                        for (o, yk) in out.iter_mut().zip(ym.row(j)) {
                            *o = 2.0 * col_sums[j] * yk;
                        }
                    }
                    for i in 0..xm.rows() {
                        let xi = xm.row(i);
                        for j in 0..ym.rows() {
                            let gij = g.get(i, j);
                            if gij == 0.0 {
                                continue;
                            }
                            for (o, xk) in gy.row_mut(j).iter_mut().zip(xi) {
                                *o -= 2.0 * gij * xk;
                            }
                        }
                    }
                    self.accumulate(grads, *y, gy);
                }
            }
            Op::Sum(a) => {
                let k = g.item()?;
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(r, c, k));
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    let gi = g.get(i, 0);
                    ga.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Trace(a) => {
                let k = g.item()?;
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.set(i, i, k);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::NormalCdf(a) => {
                self.accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| x * normal_pdf(y)));
            }
            Op::CrossEntropy(logits, probs, labels) => {
                let k = g.item()? / labels.len() as f64;
                let mut ga = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    let v = ga.get(i, l);
                    ga.set(i, l, v - 1.0);
                }
                ga.data_mut().iter_mut().for_each(|v| *v *= k);
                self.accumulate(grads, *logits, ga);
            }
            Op::MaxOf(items, best) => self.accumulate(grads, items[*best], g.clone()),
            Op::SelectRows(a, indices) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let idx: Vec<usize> = (offset..offset + rows).collect();
                    self.accumulate(grads, p, g.select_rows(&idx));
                    offset += rows;
                }
            }
        }
        Ok(())
    }
}
