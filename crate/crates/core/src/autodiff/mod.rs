//! Reverse-mode differentiation over rank-2 values.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! indices of its operands. Node indices only ever point backwards, so the
//! graph is acyclic by construction and [`Tape::backward`] is a single
//! reverse sweep.

mod check;
mod params;

pub use check::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::ParameterSet;

use thiserror::Error;

use crate::numerics::{gemm, nuclear_norm, Matrix, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible operand shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("loss must be a 1x1 value, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x + b` with the column `b` broadcast across the columns of `x`.
    AddColumn(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant.
    MulConst(Var, Matrix),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Stores the `U V^T` subgradient computed on the forward pass.
    NuclearNorm(Var, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::Shape { op, lhs: a.shape(), rhs: b.shape() });
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input node: a parameter or a constant.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Matrix::filled(1, 1, v))
    }

    /// Registers every tensor of `params` as a leaf, in order.
    pub fn register(&mut self, params: &ParameterSet) -> Vec<Var> {
        params.values().iter().map(|m| self.leaf(m.clone())).collect()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(AutodiffError::Shape { op: "matmul", lhs: va.shape(), rhs: vb.shape() });
        }
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        gemm(1.0, va, false, vb, false, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn add_column(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.cols() != 1 || vb.rows() != vx.rows() {
            return Err(AutodiffError::Shape { op: "add_column", lhs: vx.shape(), rhs: vb.shape() });
        }
        let mut out = vx.clone();
        for i in 0..out.rows() {
            let b = vb[(i, 0)];
            for j in 0..out.cols() {
                out[(i, j)] += b;
            }
        }
        Ok(self.push(out, Op::AddColumn(x, bias)))
    }

    /// `W x + b`, with `b` a column broadcast over the columns of `x`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var, AutodiffError> {
        let wx = self.matmul(w, x)?;
        self.add_column(wx, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn mul_const(&mut self, a: Var, c: &Matrix) -> Result<Var, AutodiffError> {
        same_shape("mul_const", self.value(a), c)?;
        let out = self.value(a).zip_map(c, |x, y| x * y)?;
        Ok(self.push(out, Op::MulConst(a, c.clone())))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::filled(1, 1, self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        let n = v.rows() * v.cols();
        if n == 0 {
            return Err(AutodiffError::Invalid { op: "mean", msg: "empty operand".into() });
        }
        let out = Matrix::filled(1, 1, v.sum() / n as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        if start + len > v.rows() {
            return Err(AutodiffError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for {:?}", start + len, v.shape()),
            });
        }
        let out = v.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        if start + len > v.cols() {
            return Err(AutodiffError::Invalid {
                op: "slice_cols",
                msg: format!("columns {start}..{} out of range for {:?}", start + len, v.shape()),
            });
        }
        let out = v.slice_cols(start, len);
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&mats).map_err(|_| self.concat_error("concat_rows", parts))?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats).map_err(|_| self.concat_error("concat_cols", parts))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    fn concat_error(&self, op: &'static str, parts: &[Var]) -> AutodiffError {
        let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p)).collect();
        AutodiffError::Invalid { op, msg: format!("operand shapes {shapes:?}") }
    }

    /// Sum of singular values; differentiated through the `U V^T`
    /// subgradient.
    pub fn nuclear_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let nn = nuclear_norm(self.value(a))?;
        Ok(self.push(Matrix::filled(1, 1, nn.value), Op::NuclearNorm(a, nn.subgradient)))
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    ///
    /// Each call starts from fresh zero adjoints, so repeated calls give
    /// identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    // dA += G B^T, dB += A^T G
                    gemm(1.0, &g, false, vb, true, 1.0, slot(&mut adj, *a, va.shape()));
                    gemm(1.0, va, true, &g, false, 1.0, slot(&mut adj, *b, vb.shape()));
                }
                Op::Add(a, b) => {
                    slot(&mut adj, *a, g.shape()).add_assign(&g);
                    slot(&mut adj, *b, g.shape()).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    slot(&mut adj, *a, g.shape()).add_assign(&g);
                    slot(&mut adj, *b, g.shape()).axpy(-1.0, &g);
                }
                Op::AddColumn(x, b) => {
                    slot(&mut adj, *x, g.shape()).add_assign(&g);
                    let db = slot(&mut adj, *b, (g.rows(), 1));
                    for r in 0..g.rows() {
                        db[(r, 0)] += g.row(r).iter().sum::<f64>();
                    }
                }
                Op::Scale(a, c) => slot(&mut adj, *a, g.shape()).axpy(*c, &g),
                Op::MulConst(a, c) => {
                    let d = slot(&mut adj, *a, g.shape());
                    for ((d, gv), cv) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(c.as_slice()) {
                        *d += gv * cv;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let d = slot(&mut adj, *a, g.shape());
                    for ((d, gv), yv) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).clone();
                    let d = slot(&mut adj, *a, g.shape());
                    for ((d, gv), xv) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Square(a) => {
                    let x = self.value(*a).clone();
                    let d = slot(&mut adj, *a, g.shape());
                    for ((d, gv), xv) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                        *d += 2.0 * gv * xv;
                    }
                }
                Op::Abs(a) => {
                    let x = self.value(*a).clone();
                    let d = slot(&mut adj, *a, g.shape());
                    for ((d, gv), xv) in d.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                        // zero subgradient at the kink
                        *d += gv * if *xv > 0.0 { 1.0 } else if *xv < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Sum(a) => {
                    let gv = g[(0, 0)];
                    let shape = self.shape(*a);
                    for d in slot(&mut adj, *a, shape).as_mut_slice() {
                        *d += gv;
                    }
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let gv = g[(0, 0)] / (shape.0 * shape.1) as f64;
                    for d in slot(&mut adj, *a, shape).as_mut_slice() {
                        *d += gv;
                    }
                }
                Op::SliceRows(a, start) => {
                    let shape = self.shape(*a);
                    let d = slot(&mut adj, *a, shape);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            d[(start + r, c)] += g[(r, c)];
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.shape(*a);
                    let d = slot(&mut adj, *a, shape);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            d[(r, start + c)] += g[(r, c)];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.shape(*p);
                        slot(&mut adj, *p, shape).add_assign(&g.slice_rows(offset, shape.0));
                        offset += shape.0;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.shape(*p);
                        slot(&mut adj, *p, shape).add_assign(&g.slice_cols(offset, shape.1));
                        offset += shape.1;
                    }
                }
                Op::NuclearNorm(a, sub) => slot(&mut adj, *a, sub.shape()).axpy(g[(0, 0)], sub),
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }
}

fn slot(adj: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    adj[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled when `v` does not influence the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.shape(v);
            Matrix::zeros(r, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.tanh(x);
        assert_eq!(t.scalar_value(y), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn identity_affine() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::identity(3));
        let b = t.leaf(Matrix::zeros(3, 1));
        let xm = Matrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64);
        let x = t.leaf(xm.clone());
        let y = t.affine(w, b, x).unwrap();
        assert_eq!(t.value(y), &xm);
    }

    #[test]
    fn constant_loss_has_zero_adjoints() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::filled(2, 2, 3.0));
        let c = t.scalar(4.0);
        let g = t.backward(c).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.wrt(&t, p), Matrix::zeros(2, 2));
    }

    #[test]
    fn half_squared_norm_adjoint_is_identity() {
        let pm = Matrix::from_fn(3, 1, |i, _| i as f64 - 1.3);
        let mut t = Tape::new();
        let p = t.leaf(pm.clone());
        let sq = t.square(p);
        let s = t.sum(sq);
        let loss = t.scale(s, 0.5);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(&t, p), pm);
        // a second sweep gives the same adjoints
        assert_eq!(t.backward(loss).unwrap().wrt(&t, p), pm);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::zeros(2, 1));
        assert_eq!(t.backward(p).unwrap_err(), AutodiffError::NonScalarLoss((2, 1)));
    }

    #[test]
    fn shape_errors_name_the_operands() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 3));
        match t.matmul(a, b) {
            Err(AutodiffError::Shape { op, lhs, rhs }) => {
                assert_eq!((op, lhs, rhs), ("matmul", (2, 3), (2, 3)));
            }
            other => panic!("{other:?}"),
        }
        assert!(t.add_column(a, b).is_err());
        assert!(t.slice_rows(a, 1, 2).is_err());
    }

    #[test]
    fn slices_and_concats_route_adjoints() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64));
        let top = t.slice_rows(a, 0, 1).unwrap();
        let right = t.slice_cols(a, 1, 2).unwrap();
        let both = t.concat_cols(&[top, top]).unwrap();
        let s1 = t.sum(both);
        let s2 = t.sum(right);
        let total = t.add(s1, s2).unwrap();
        let g = t.backward(total).unwrap().wrt(&t, a);
        assert_eq!(g, Matrix::from_rows(&[vec![2.0, 3.0, 3.0], vec![0.0, 1.0, 1.0]]).unwrap());
    }
}
