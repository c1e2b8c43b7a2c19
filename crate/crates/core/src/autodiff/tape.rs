use std::cell::RefCell;
use std::fmt;

use super::matrix::{matmul_nt, matmul_tn, matmul_unchecked, Matrix};
use crate::error::{Error, Result};

/// Offset added under the square root so that `sqrt_eps` has a finite
/// derivative at zero.
pub const SQRT_EPS: f64 = 1e-12;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    LeakyRelu(usize, f64),
    Gelu(usize),
    SoftmaxRows(usize),
    LayerNormRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    SqrtEps(usize),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order for one reverse pass.
///
/// Node ids are assigned on push, so every node's parents precede it and the
/// recording is already a topological order. A tape is single-threaded;
/// distinct tapes are independent.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Matrix>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: gradients are collected for it.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass
    /// reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Matrix> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Concatenates along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let nodes = self.nodes.borrow();
        let values: Vec<&Matrix> = parts.iter().map(|p| &nodes[p.id].value).collect();
        let requires_grad = parts.iter().any(|p| nodes[p.id].requires_grad);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let (value, op) = match axis {
            0 => {
                let cols = values[0].cols();
                if values.iter().any(|v| v.cols() != cols) {
                    return Err(Error::shape("concat", "column counts differ on axis 0"));
                }
                let rows = values.iter().map(|v| v.rows()).sum();
                let data = values.iter().flat_map(|v| v.data().iter().copied()).collect();
                (Matrix::from_vec(rows, cols, data)?, Op::ConcatRows(ids))
            }
            1 => {
                let rows = values[0].rows();
                if values.iter().any(|v| v.rows() != rows) {
                    return Err(Error::shape("concat", "row counts differ on axis 1"));
                }
                let cols: usize = values.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in &values {
                        data.extend_from_slice(v.row(r));
                    }
                }
                (Matrix::from_vec(rows, cols, data)?, Op::ConcatCols(ids))
            }
            a => return Err(Error::Axis(a)),
        };
        drop(nodes);
        Ok(self.push(value, op, requires_grad))
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn unary(&self, a: Var<'_>, f: impl FnOnce(&Matrix) -> (Matrix, Op)) -> Var<'_> {
        let nodes = self.nodes.borrow();
        let node = &nodes[a.id];
        let (value, op) = f(&node.value);
        let rg = node.requires_grad;
        drop(nodes);
        self.push(value, op, rg)
    }

    fn binary<'t>(
        &'t self,
        a: Var<'t>,
        b: Var<'t>,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<(Matrix, Op)>,
    ) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let (value, op) = f(&nodes[a.id].value, &nodes[b.id].value)?;
        let rg = nodes[a.id].requires_grad || nodes[b.id].requires_grad;
        drop(nodes);
        Ok(self.push(value, op, rg))
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        let (rows, cols) = nodes[root].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut local: Vec<Option<Matrix>> = vec![None; root + 1];
        local[root] = Some(Matrix::scalar(1.0));
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize(nodes.len(), None);
        }

        for id in (0..=root).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |target: usize, m: Matrix| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut local[target] {
                    Some(existing) => existing.axpy(1.0, &m),
                    slot @ None => *slot = Some(m),
                }
            };
            match &node.op {
                Op::Leaf => match &mut grads[id] {
                    Some(existing) => existing.axpy(1.0, &g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        acc(*a, matmul_nt(&g, bv));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, matmul_tn(av, &g));
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        acc(*a, hadamard(&g, bv));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, hadamard(&g, av));
                    }
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::AddRow(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*bias, gb);
                    acc(*a, g);
                }
                Op::LeakyRelu(a, alpha) => {
                    let x = &nodes[*a].value;
                    let d = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { alpha * gv })
                            .collect(),
                    )?;
                    acc(*a, d);
                }
                Op::Gelu(a) => {
                    let x = &nodes[*a].value;
                    let d = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| gv * gelu_grad(xv))
                            .collect(),
                    )?;
                    acc(*a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNormRows(a) => {
                    let x = &nodes[*a].value;
                    let y = &node.value;
                    let n = x.cols() as f64;
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (yr, gr) = (y.row(r), g.row(r));
                        let gmean = gr.iter().sum::<f64>() / n;
                        let gymean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = inv * (gv - gmean - yv * gymean);
                        }
                    }
                    acc(*a, d);
                }
                Op::ConcatRows(ids) => {
                    let mut start = 0;
                    for &p in ids {
                        let (rows, cols) = nodes[p].value.shape();
                        if nodes[p].requires_grad {
                            let data = g.data()[start * cols..(start + rows) * cols].to_vec();
                            acc(p, Matrix::from_vec(rows, cols, data)?);
                        }
                        start += rows;
                    }
                }
                Op::ConcatCols(ids) => {
                    let mut start = 0;
                    for &p in ids {
                        let (rows, cols) = nodes[p].value.shape();
                        if nodes[p].requires_grad {
                            acc(p, Matrix::from_fn(rows, cols, |r, c| g.get(r, start + c)));
                        }
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    acc(*a, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let n = (rows * cols) as f64;
                    acc(*a, Matrix::filled(rows, cols, g.get(0, 0) / n));
                }
                Op::SumCols(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    acc(*a, Matrix::from_fn(rows, cols, |r, _| g.get(r, 0)));
                }
                Op::SqrtEps(a) => {
                    let y = &node.value;
                    let d = g.zip_map(y, |gv, yv| gv / (2.0 * yv))?;
                    acc(*a, d);
                }
            }
        }
        Ok(())
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    a.zip_map(b, |x, y| x * y).expect("hadamard shapes checked on forward")
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Numerically stable row softmax on a plain matrix.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn layer_norm_rows(x: &Matrix) -> Matrix {
    let n = x.cols() as f64;
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Matrix> {
        self.tape.grad(*self)
    }

    /// Reverse pass from this scalar. Leaf gradients accumulate across
    /// repeated calls until [`Tape::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, |a, b| {
            if a.cols() != b.rows() {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} * {:?}", a.shape(), b.shape()),
                ));
            }
            Ok((matmul_unchecked(a, b), Op::MatMul(self.id, rhs.id)))
        })
    }

    pub fn t(self) -> Var<'t> {
        self.tape
            .unary(self, |a| (a.transpose(), Op::Transpose(self.id)))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, |a, b| {
            check_same("add", a, b)?;
            Ok((a.zip_map(b, |x, y| x + y)?, Op::Add(self.id, rhs.id)))
        })
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, |a, b| {
            check_same("sub", a, b)?;
            Ok((a.zip_map(b, |x, y| x - y)?, Op::Sub(self.id, rhs.id)))
        })
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, rhs, |a, b| {
            check_same("mul", a, b)?;
            Ok((hadamard(a, b), Op::Mul(self.id, rhs.id)))
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self, |a| (a.scale(s), Op::Scale(self.id, s)))
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(self, bias, |a, b| {
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::shape(
                    "add_row",
                    format!("{:?} + row {:?}", a.shape(), b.shape()),
                ));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                for (o, v) in out.row_mut(r).iter_mut().zip(b.data()) {
                    *o += v;
                }
            }
            Ok((out, Op::AddRow(self.id, bias.id)))
        })
    }

    pub fn leaky_relu(self, alpha: f64) -> Var<'t> {
        self.tape.unary(self, |a| {
            (a.map(|v| leaky_relu(v, alpha)), Op::LeakyRelu(self.id, alpha))
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    /// Tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(self) -> Var<'t> {
        self.tape
            .unary(self, |a| (a.map(gelu), Op::Gelu(self.id)))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.tape
            .unary(self, |a| (softmax_rows(a), Op::SoftmaxRows(self.id)))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(self) -> Var<'t> {
        self.tape
            .unary(self, |a| (layer_norm_rows(a), Op::LayerNormRows(self.id)))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if start + len > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {rows}", start + len),
            ));
        }
        Ok(self.tape.unary(self, |a| {
            let data = a.data()[start * cols..(start + len) * cols].to_vec();
            (
                Matrix::from_vec(len, cols, data).expect("slice bounds checked"),
                Op::SliceRows(self.id, start),
            )
        }))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if start + len > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {cols}", start + len),
            ));
        }
        Ok(self.tape.unary(self, |a| {
            (
                Matrix::from_fn(rows, len, |r, c| a.get(r, start + c)),
                Op::SliceCols(self.id, start),
            )
        }))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let (rows, cols) = self.shape();
        let total: usize = sizes.iter().sum();
        let extent = match axis {
            0 => rows,
            1 => cols,
            a => return Err(Error::Axis(a)),
        };
        if total != extent {
            return Err(Error::shape(
                "split",
                format!("sizes sum to {total}, axis {axis} has {extent}"),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(if axis == 0 {
                self.slice_rows(start, s)?
            } else {
                self.slice_cols(start, s)?
            });
            start += s;
        }
        Ok(out)
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self, |a| (Matrix::scalar(a.sum()), Op::Sum(self.id)))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self, |a| {
            (
                Matrix::scalar(a.sum() / a.len() as f64),
                Op::Mean(self.id),
            )
        })
    }

    /// Sums each row, giving a `rows x 1` column.
    pub fn sum_cols(self) -> Var<'t> {
        self.tape.unary(self, |a| {
            let data = (0..a.rows()).map(|r| a.row(r).iter().sum()).collect();
            (
                Matrix::from_vec(a.rows(), 1, data).expect("column shape"),
                Op::SumCols(self.id),
            )
        })
    }

    /// `sqrt(x + 1e-12)`.
    pub fn sqrt_eps(self) -> Var<'t> {
        self.tape.unary(self, |a| {
            (a.map(|v| (v + SQRT_EPS).sqrt()), Op::SqrtEps(self.id))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(Matrix::scalar(3.0));
        let loss = x.mul(x).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = tape.param(Matrix::scalar(3.0));
        let loss = x.mul(x).unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().get(0, 0), 12.0);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(
            x.backward(),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let tape = Tape::new();
        let v = tape.param(Matrix::from_rows(&[[0.3, -1.2, 2.0, 0.7]]).unwrap());
        v.softmax_rows().sum().backward().unwrap();
        assert!(v.grad().unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::new();
        let v = tape.param(Matrix::from_fn(2, 5, |r, c| (r * 5 + c) as f64));
        v.mean().backward().unwrap();
        for &g in v.grad().unwrap().data() {
            assert!((g - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(leaky_relu(-1.0, 0.01), -0.01);
        assert_eq!(gelu(0.0), 0.0);
        let s = softmax_rows(&Matrix::filled(1, 4, 2.5));
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn gelu_close_to_exact_erf_form() {
        // Exact GELU values x * Phi(x) at a few points.
        let exact = [(-2.0, -0.045_500_263_896_358_4), (1.0, 0.841_344_746_068_542_9), (0.5, 0.345_731_030_251_359_4)];
        for (x, want) in exact {
            assert!((gelu(x) - want).abs() < 1e-3);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64));
        let b = tape.constant(Matrix::from_fn(4, 3, |r, c| -((r * 3 + c) as f64)));
        let cat = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(cat.shape(), (6, 3));
        let parts = cat.split(0, &[2, 4]).unwrap();
        assert_eq!(parts[0].value(), a.value());
        assert_eq!(parts[1].value(), b.value());

        let c = tape.constant(Matrix::from_fn(2, 5, |r, c| (r + c) as f64));
        let wide = tape.concat(&[a, c], 1).unwrap();
        let parts = wide.split(1, &[3, 5]).unwrap();
        assert_eq!(parts[0].value(), a.value());
        assert_eq!(parts[1].value(), c.value());
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::zeros(2, 3));
        let b = tape.constant(Matrix::zeros(2, 2));
        assert!(a.matmul(b).is_err());
        assert!(a.add(b).is_err());
        assert!(tape.concat(&[a, b], 0).is_err());
        assert!(matches!(tape.concat(&[a, b], 2), Err(Error::Axis(2))));
        assert!(a.split(1, &[1, 1]).is_err());
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_fn(3, 3, |r, c| r as f64 - c as f64 * 0.5));
        let ones = tape.constant(Matrix::filled(3, 3, 1.0));
        assert_eq!(x.mul(ones).unwrap().value(), x.value());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Matrix::scalar(2.0));
        let p = tape.param(Matrix::scalar(5.0));
        p.mul(c).unwrap().backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(p.grad().unwrap().get(0, 0), 2.0);
    }
}
