//! Tape of matrix operations with exact reverse-mode gradients.
//!
//! Every operation is evaluated eagerly when it is pushed, so the tape is
//! also the forward evaluator. Nodes are appended in dependency order, which
//! makes the reverse sweep a plain backwards walk.

use super::DiffError;
use crate::graph::Csr;
use ndarray::{Array2, Axis};
use std::sync::Arc;

/// Epsilon added to division denominators and log arguments.
pub const GUARD: f64 = 1e-10;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(Arc<Csr>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    Exp(Var),
    Log(Var),
    Trace(Var),
    FrobSq(Var),
    Transpose(Var),
    Scale(Var, f64),
    Offset(Var),
    Sum(Var),
    Clamp(Var, f64, f64),
    GatherRows(Var, Arc<[usize]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node of the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sums `g` over the axes along which an operand of shape `target` was broadcast.
fn reduce_to(g: Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if target.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if target.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node (parameter or constant input).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64, DiffError> {
        let value = self.value(v);
        if shape(value) != (1, 1) {
            return Err(DiffError::NonScalarRoot(shape(value)));
        }
        Ok(value[[0, 0]])
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> DiffError {
        DiffError::ShapeMismatch {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(self.mismatch("matmul", a, b));
        }
        let value = self.value(a).dot(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Constant sparse matrix times a dense node.
    pub fn spmm(&mut self, s: &Arc<Csr>, b: Var) -> Result<Var, DiffError> {
        if s.shape().1 != self.shape(b).0 {
            return Err(DiffError::ShapeMismatch {
                op: "spmm",
                left: s.shape(),
                right: self.shape(b),
            });
        }
        let value = s.matmul(self.value(b));
        Ok(self.push(value, Op::SpMatMul(Arc::clone(s), b)))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<((usize, usize), Array2<f64>), DiffError> {
        let out = broadcast_shape(self.shape(a), self.shape(b))
            .ok_or_else(|| self.mismatch(op, a, b))?;
        let va = self.value(a).broadcast(out).expect("checked");
        let vb = self.value(b).broadcast(out).expect("checked");
        let mut value = Array2::zeros(out);
        ndarray::Zip::from(&mut value)
            .and(&va)
            .and(&vb)
            .for_each(|o, &x, &y| *o = f(x, y));
        Ok((out, value))
    }

    /// Elementwise sum; either operand may be a row vector, column vector or 1×1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (_, value) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (_, value) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (_, value) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// `a ⊘ (b + GUARD)`. A guarded denominator that is exactly zero is an error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.value(b).iter().any(|&d| d + GUARD == 0.0) {
            return Err(DiffError::ZeroDenominator);
        }
        let (_, value) = self.binary("div", a, b, |x, y| x / (y + GUARD))?;
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::Empty("concat_cols"))?;
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(self.mismatch("concat_cols", first, bad));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        self.push(value, Op::RowSoftmax(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// `ln(a + GUARD)`; arguments with `a + GUARD ≤ 0` are rejected.
    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).iter().any(|&x| x + GUARD <= 0.0) {
            return Err(DiffError::LogDomain);
        }
        let value = self.value(a).mapv(|x| (x + GUARD).ln());
        Ok(self.push(value, Op::Log(a)))
    }

    pub fn trace(&mut self, a: Var) -> Result<Var, DiffError> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(self.mismatch("trace", a, a));
        }
        let value = self.value(a).diag().sum();
        Ok(self.push(Array2::from_elem((1, 1), value), Op::Trace(a)))
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x * x).sum();
        self.push(Array2::from_elem((1, 1), value), Op::FrobSq(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    /// Adds the constant `c` to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::Offset(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), value), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let count = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / count)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Rows `index[r]` of `a`, stacked.
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var, DiffError> {
        let rows = self.shape(a).0;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(DiffError::IndexOutOfRange { index: bad, rows });
        }
        let value = self.value(a).select(Axis(0), index);
        Ok(self.push(value, Op::GatherRows(a, Arc::clone(index))))
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let root_shape = self.shape(root);
        if root_shape != (1, 1) {
            return Err(DiffError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SpMatMul(s, b) => accumulate(&mut grads, *b, s.transpose_matmul(&g)),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(-g, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let s = shape(&g);
                    let va = self.value(*a).broadcast(s).expect("forward shape");
                    let vb = self.value(*b).broadcast(s).expect("forward shape");
                    accumulate(&mut grads, *a, reduce_to(&g * &vb, self.shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(&g * &va, self.shape(*b)));
                }
                Op::Div(a, b) => {
                    let s = shape(&g);
                    let va = self.value(*a).broadcast(s).expect("forward shape");
                    let den = self.value(*b).broadcast(s).expect("forward shape").mapv(|d| d + GUARD);
                    let ga = &g / &den;
                    let gb = -(&ga * &va) / &den;
                    accumulate(&mut grads, *a, reduce_to(ga, self.shape(*a)));
                    accumulate(&mut grads, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let slice = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        accumulate(&mut grads, *p, slice);
                        col += w;
                    }
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g * mask);
                }
                Op::Sigmoid(a) => accumulate(&mut grads, *a, g * out.mapv(|s| s * (1.0 - s))),
                Op::RowSoftmax(a) => {
                    let mut ga = Array2::zeros(out.raw_dim());
                    for ((mut dst, s), gr) in ga.rows_mut().into_iter().zip(out.rows()).zip(g.rows()) {
                        let inner = s.dot(&gr);
                        ndarray::Zip::from(&mut dst)
                            .and(&s)
                            .and(&gr)
                            .for_each(|d, &si, &gi| *d = si * (gi - inner));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * out),
                Op::Log(a) => {
                    let den = self.value(*a).mapv(|x| x + GUARD);
                    accumulate(&mut grads, *a, g / den);
                }
                Op::Trace(a) => {
                    let n = self.shape(*a).0;
                    accumulate(&mut grads, *a, Array2::eye(n) * g[[0, 0]]);
                }
                Op::FrobSq(a) => accumulate(&mut grads, *a, self.value(*a) * (2.0 * g[[0, 0]])),
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Sum(a) => accumulate(&mut grads, *a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
                Op::Clamp(a, lo, hi) => {
                    let mask = self
                        .value(*a)
                        .mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g * mask);
                }
                Op::GatherRows(a, index) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (r, &i) in index.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| shape(&n.value)).collect();
        Ok(Gradients { grads, shapes })
    }
}
