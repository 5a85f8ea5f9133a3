//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix; row vectors are `1 x d`. Ops are
//! recorded in evaluation order, so a single reverse sweep from the loss
//! yields gradients for every node that requires one.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a · bᵀ`
    Linear(Var, Var),
    /// `a · b`
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `a + 1·row`
    AddRow(Var, Var),
    Mul(Var, Var),
    /// `a ⊙ 1·row`
    MulRow(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Rows(Var, Vec<usize>),
    /// `out[targets[k]] += a[k]`, accumulated in `k` order.
    ScatterRows(Var, Vec<usize>),
    SumRows(Var),
    SumAll(Var),
    /// Sum over rows of the per-row mean binary cross-entropy.
    Bce(Var, Mat, f64),
}

struct Node {
    value: Arc<Mat>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by tape position.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter or a tracked external value).
    pub fn variable(&mut self, value: Mat) -> Var {
        self.variable_shared(Arc::new(value))
    }

    /// Like [`Tape::variable`], sharing the caller's buffer.
    pub fn variable_shared(&mut self, value: Arc<Mat>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Mat::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &*self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let out = if xv.nrows() <= SMALL_ROWS {
            // Row-wise dot products skip the packing a full GEMM would do.
            let mut out = Mat::zeros((xv.nrows(), wv.nrows()));
            for (xr, mut or) in xv.outer_iter().zip(out.outer_iter_mut()) {
                for (o, wr) in or.iter_mut().zip(wv.outer_iter()) {
                    *o = wr.dot(&xr);
                }
            }
            out
        } else {
            xv.dot(&wv.t())
        };
        self.push(out, Op::Linear(x, w), &[x, w])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().as_standard_layout().into_owned();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a row vector");
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a row vector");
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    /// Gathers rows by index; indices may repeat.
    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), idx);
        self.push(out, Op::Rows(a, idx.to_vec()), &[a])
    }

    /// Sums row `k` of `a` into row `targets[k]` of an `n_rows`-row output.
    pub fn scatter_rows(&mut self, a: Var, targets: &[usize], n_rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), targets.len(), "scatter_rows: one target per row");
        let mut out = Mat::zeros((n_rows, src.ncols()));
        for (k, &t) in targets.iter().enumerate() {
            let mut dst = out.row_mut(t);
            dst += &src.row(k);
        }
        self.push(out, Op::ScatterRows(a, targets.to_vec()), &[a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(out, Op::SumRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    /// Sum over rows of mean BCE across columns, probabilities clamped to
    /// `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: Mat, eps: f64) -> Var {
        assert_eq!(self.shape(p), targets.dim(), "bce: shape mismatch");
        let pv = self.value(p);
        let k = pv.ncols().max(1) as f64;
        let mut total = 0.0;
        for (&pi, &yi) in pv.iter().zip(targets.iter()) {
            total += bce_term(pi, yi, eps);
        }
        let out = Mat::from_elem((1, 1), total / k);
        self.push(out, Op::Bce(p, targets, eps), &[p])
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Linear(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let small = g.nrows() <= SMALL_ROWS;
                    if self.needs(*x) {
                        let dst = slot(&mut grads, *x, xv.dim());
                        if small {
                            for (gr, mut dr) in g.outer_iter().zip(dst.outer_iter_mut()) {
                                for (&gi, wr) in gr.iter().zip(wv.outer_iter()) {
                                    dr.scaled_add(gi, &wr);
                                }
                            }
                        } else {
                            general_mat_mul(1.0, &g, wv, 1.0, dst);
                        }
                    }
                    if self.needs(*w) {
                        let dst = slot(&mut grads, *w, wv.dim());
                        if small {
                            for (gr, xr) in g.outer_iter().zip(xv.outer_iter()) {
                                for (&gi, mut dr) in gr.iter().zip(dst.outer_iter_mut()) {
                                    dr.scaled_add(gi, &xr);
                                }
                            }
                        } else {
                            general_mat_mul(1.0, &g.t(), xv, 1.0, dst);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        general_mat_mul(1.0, &g, &bv.t(), 1.0, slot(&mut grads, *a, av.dim()));
                    }
                    if self.needs(*b) {
                        general_mat_mul(1.0, &av.t(), &g, 1.0, slot(&mut grads, *b, bv.dim()));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        *slot(&mut grads, *a, g.dim()) += &g;
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.needs(*r) {
                        let dst = slot(&mut grads, *r, (1, g.ncols()));
                        for gr in g.outer_iter() {
                            let mut d = dst.row_mut(0);
                            d += &gr;
                        }
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::MulRow(a, r) => {
                    if self.needs(*r) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *r, gr);
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, &g * self.value(*r));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::OneMinus(a) => acc(&mut grads, *a, -g),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = &g * &y.mapv(|v| v * (1.0 - v));
                    acc(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = &g * &y.mapv(|v| 1.0 - v * v);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let shape = self.shape(p);
                        if self.needs(p) {
                            *slot(&mut grads, p, shape) += &g.slice(s![.., start..start + shape.1]);
                        }
                        start += shape.1;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let shape = self.shape(p);
                        if self.needs(p) {
                            *slot(&mut grads, p, shape) += &g.slice(s![start..start + shape.0, ..]);
                        }
                        start += shape.0;
                    }
                }
                Op::SliceCols(a, start) => {
                    let w = g.ncols();
                    let dst = slot(&mut grads, *a, self.shape(*a));
                    let mut view = dst.slice_mut(s![.., *start..*start + w]);
                    view += &g;
                }
                Op::Rows(a, idx) => {
                    let dst = slot(&mut grads, *a, self.shape(*a));
                    for (k, &i) in idx.iter().enumerate() {
                        let mut d = dst.row_mut(i);
                        d += &g.row(k);
                    }
                }
                Op::ScatterRows(a, targets) => {
                    acc(&mut grads, *a, g.select(Axis(0), targets));
                }
                Op::SumRows(a) => {
                    let dst = slot(&mut grads, *a, self.shape(*a));
                    *dst += &g.row(0);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(*a);
                    acc(&mut grads, *a, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::Bce(p, y, eps) => {
                    let pv = self.value(*p);
                    let k = pv.ncols().max(1) as f64;
                    let scale = g[[0, 0]] / k;
                    let mut d = Mat::zeros(pv.dim());
                    for ((di, &pi), &yi) in d.iter_mut().zip(pv.iter()).zip(y.iter()) {
                        *di = scale * bce_term_grad(pi, yi, *eps);
                    }
                    acc(&mut grads, *p, d);
                }
            }
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Row count up to which products avoid the packed GEMM path.
const SMALL_ROWS: usize = 1;

/// Gradient buffer for `v`, zero-initialized on first use.
fn slot(grads: &mut [Option<Mat>], v: Var, shape: (usize, usize)) -> &mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(shape))
}

fn acc(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bce_term(p: f64, y: f64, eps: f64) -> f64 {
    let q = p.clamp(eps, 1.0 - eps);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

fn bce_term_grad(p: f64, y: f64, eps: f64) -> f64 {
    if p < eps || p > 1.0 - eps {
        0.0
    } else {
        -y / p + (1.0 - y) / (1.0 - p)
    }
}
