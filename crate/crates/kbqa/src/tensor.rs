//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every value the model computes is a [`Tensor`]: a row-major `Vec<f64>`
//! plus a shape. Operations on tensors that require gradients record a
//! backward closure on the output node; [`Tensor::backward`] traces the
//! graph into a [`Tape`] (inputs strictly before outputs) and replays it
//! in reverse, accumulating gradients additively. Callers zero gradients
//! between steps by building fresh leaves.
//!
//! Scalars are shape `[1]` tensors. There is no broadcasting: the few
//! scalar-times-vector cases the model needs go through [`Tensor::scale_by`].

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    OutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: loss does not depend on any tensor that requires grad")]
    NoGradPath,
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

/// Backward rule of one recorded operation. Receives the output node (for
/// its value and accumulated gradient) and the input tensors, and adds the
/// inputs' gradient contributions. Closures capture only small auxiliary
/// values (axes, indices, masks) so the graph is droppable iteratively.
type BackwardFn = Box<dyn Fn(&Node, &[Tensor])>;

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

impl Drop for Node {
    // Deep graphs (one node per op over a whole training batch) would
    // otherwise recurse through `parents` on drop and overflow the stack.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        self.backward = None;
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(t.inner) {
                stack.append(&mut node.parents);
                node.backward = None;
            }
        }
    }
}

/// A dense tensor participating in the autodiff graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("data", &self.inner.data)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(Node {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward: if requires_grad { backward } else { None },
            }),
        }
    }

    /// A constant tensor (no gradient).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                shape,
                reason: format!("shape does not match {} data elements", data.len()),
            });
        }
        Ok(Tensor::new_node(shape, data, Vec::new(), None))
    }

    /// A leaf tensor that accumulates gradients.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                op: "param",
                shape,
                reason: format!("shape does not match {} data elements", data.len()),
            });
        }
        Ok(Tensor {
            inner: Rc::new(Node {
                shape,
                data,
                requires_grad: true,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::new_node(vec![n], data, Vec::new(), None)
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::new_node(vec![1], vec![x], Vec::new(), None)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = numel_of(&shape);
        Tensor::new_node(shape, vec![0.0; n], Vec::new(), None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(TensorError::InvalidShape {
                op: "item",
                shape: self.shape().to_vec(),
                reason: "expected a scalar".into(),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Accumulated gradient, if backward has run through this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Identity key for graph bookkeeping in tests and the tape.
    pub fn node_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn with_grad_mut(&self, f: impl FnOnce(&mut [f64])) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        let grad = slot.get_or_insert_with(|| vec![0.0; self.inner.data.len()]);
        f(grad);
    }

    /// Adds `delta` elementwise into this tensor's gradient accumulator.
    pub fn accumulate_grad(&self, delta: &[f64]) {
        self.with_grad_mut(|g| {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        });
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::InvalidShape {
                op,
                shape: self.shape().to_vec(),
                reason: "expected a 2-d tensor".into(),
            }),
        }
    }

    // ---- elementwise arithmetic -------------------------------------------------

    fn zip_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "add")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].accumulate_grad(&g);
                ps[1].accumulate_grad(&g);
            })),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].accumulate_grad(&g);
                ps[1].with_grad_mut(|pg| {
                    for (pgi, gi) in pg.iter_mut().zip(g.iter()) {
                        *pgi -= gi;
                    }
                });
            })),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    let b = ps[1].data();
                    for i in 0..pg.len() {
                        pg[i] += g[i] * b[i];
                    }
                });
                ps[1].with_grad_mut(|pg| {
                    let a = ps[0].data();
                    for i in 0..pg.len() {
                        pg[i] += g[i] * a[i];
                    }
                });
            })),
        ))
    }

    /// Multiplies every element by a fixed constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|a| a * c).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += c * g[i];
                    }
                });
            })),
        )
    }

    /// Multiplies by a scalar tensor, differentiable in both arguments.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if !s.is_scalar() {
            return Err(TensorError::InvalidShape {
                op: "scale_by",
                shape: s.shape().to_vec(),
                reason: "scale factor must be a scalar".into(),
            });
        }
        let sv = s.data()[0];
        let data = self.data().iter().map(|a| a * sv).collect();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                let sv = ps[1].data()[0];
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += sv * g[i];
                    }
                });
                ps[1].with_grad_mut(|pg| {
                    let x = ps[0].data();
                    let mut acc = 0.0;
                    for i in 0..x.len() {
                        acc += x[i] * g[i];
                    }
                    pg[0] += acc;
                });
            })),
        ))
    }

    // ---- linear algebra ---------------------------------------------------------

    /// 2-d matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.rows_cols("matmul")?;
        let (k2, n) = rhs.rows_cols("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                let row = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * row[j];
                }
            }
        }
        Ok(Tensor::new_node(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    let b = ps[1].data();
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * b[p * n + j];
                            }
                            pg[i * k + p] += acc;
                        }
                    }
                });
                ps[1].with_grad_mut(|pg| {
                    let a = ps[0].data();
                    for p in 0..k {
                        for i in 0..m {
                            let aip = a[i * k + p];
                            for j in 0..n {
                                pg[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            })),
        ))
    }

    /// Matrix-vector product `[m,n] x [n] -> [m]`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        let (m, n) = self.rows_cols("matvec")?;
        if v.shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let a = self.data();
        let x = v.data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
        Ok(Tensor::new_node(
            vec![m],
            out,
            vec![self.clone(), v.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    let x = ps[1].data();
                    for i in 0..m {
                        let gi = g[i];
                        let prow = &mut pg[i * n..(i + 1) * n];
                        for j in 0..n {
                            prow[j] += gi * x[j];
                        }
                    }
                });
                ps[1].with_grad_mut(|pg| {
                    let a = ps[0].data();
                    for i in 0..m {
                        let gi = g[i];
                        let row = &a[i * n..(i + 1) * n];
                        for j in 0..n {
                            pg[j] += gi * row[j];
                        }
                    }
                });
            })),
        ))
    }

    /// Inner product of two equal-length vectors, as a scalar tensor.
    pub fn dot(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 1 || self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.data().iter().zip(rhs.data()) {
            acc += a * b;
        }
        Ok(Tensor::new_node(
            vec![1],
            vec![acc],
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice()[0];
                ps[0].with_grad_mut(|pg| {
                    let b = ps[1].data();
                    for i in 0..pg.len() {
                        pg[i] += g * b[i];
                    }
                });
                ps[1].with_grad_mut(|pg| {
                    let a = ps[0].data();
                    for i in 0..pg.len() {
                        pg[i] += g * a[i];
                    }
                });
            })),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.rows_cols("transpose")?;
        let a = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        Ok(Tensor::new_node(
            vec![n, m],
            out,
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    for i in 0..m {
                        for j in 0..n {
                            pg[i * n + j] += g[j * m + i];
                        }
                    }
                });
            })),
        ))
    }

    // ---- shape ops --------------------------------------------------------------

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if numel_of(&shape) != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("element count differs from {:?}", self.shape()),
            });
        }
        Ok(Tensor::new_node(
            shape,
            self.data().to_vec(),
            vec![self.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                ps[0].accumulate_grad(&out.grad_slice());
            })),
        ))
    }

    /// Concatenates tensors along `axis`. 1-d tensors concatenate along axis 0;
    /// 2-d tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no tensors given".into(),
            });
        }
        let ndim = parts[0].shape().len();
        for p in parts {
            if p.shape().len() != ndim {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        match (ndim, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                let mut lens = Vec::with_capacity(parts.len());
                for p in parts {
                    data.extend_from_slice(p.data());
                    lens.push(p.numel());
                }
                let total = data.len();
                Ok(Tensor::new_node(
                    vec![total],
                    data,
                    parts.to_vec(),
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        let mut off = 0;
                        for (p, len) in ps.iter().zip(&lens) {
                            p.accumulate_grad(&g[off..off + len]);
                            off += len;
                        }
                    })),
                ))
            }
            (2, 0) => {
                let cols = parts[0].shape()[1];
                let mut rows = 0;
                let mut data = Vec::new();
                let mut row_counts = Vec::with_capacity(parts.len());
                for p in parts {
                    if p.shape()[1] != cols {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: parts[0].shape().to_vec(),
                            rhs: p.shape().to_vec(),
                        });
                    }
                    rows += p.shape()[0];
                    row_counts.push(p.shape()[0]);
                    data.extend_from_slice(p.data());
                }
                Ok(Tensor::new_node(
                    vec![rows, cols],
                    data,
                    parts.to_vec(),
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        let mut off = 0;
                        for (p, rc) in ps.iter().zip(&row_counts) {
                            let len = rc * cols;
                            p.accumulate_grad(&g[off..off + len]);
                            off += len;
                        }
                    })),
                ))
            }
            (2, 1) => {
                let rows = parts[0].shape()[0];
                let mut cols = 0;
                let mut col_counts = Vec::with_capacity(parts.len());
                for p in parts {
                    if p.shape()[0] != rows {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            lhs: parts[0].shape().to_vec(),
                            rhs: p.shape().to_vec(),
                        });
                    }
                    cols += p.shape()[1];
                    col_counts.push(p.shape()[1]);
                }
                let mut data = vec![0.0; rows * cols];
                let mut off = 0;
                for p in parts {
                    let pc = p.shape()[1];
                    let pd = p.data();
                    for r in 0..rows {
                        data[r * cols + off..r * cols + off + pc]
                            .copy_from_slice(&pd[r * pc..(r + 1) * pc]);
                    }
                    off += pc;
                }
                Ok(Tensor::new_node(
                    vec![rows, cols],
                    data,
                    parts.to_vec(),
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        let mut off = 0;
                        for (p, pc) in ps.iter().zip(&col_counts) {
                            p.with_grad_mut(|pg| {
                                for r in 0..rows {
                                    for c in 0..*pc {
                                        pg[r * pc + c] += g[r * cols + off + c];
                                    }
                                }
                            });
                            off += pc;
                        }
                    })),
                ))
            }
            _ => Err(TensorError::InvalidShape {
                op: "concat",
                shape: parts[0].shape().to_vec(),
                reason: format!("unsupported axis {axis}"),
            }),
        }
    }

    /// Stacks equal-length vectors into a `[len, dim]` matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "stack_rows",
                shape: vec![],
                reason: "no rows given".into(),
            });
        }
        let dim = rows[0].numel();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.shape() != [dim] {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![dim],
                    rhs: r.shape().to_vec(),
                });
            }
            data.extend_from_slice(r.data());
        }
        Ok(Tensor::new_node(
            vec![rows.len(), dim],
            data,
            rows.to_vec(),
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                for (t, p) in ps.iter().enumerate() {
                    p.accumulate_grad(&g[t * dim..(t + 1) * dim]);
                }
            })),
        ))
    }

    /// Contiguous range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let bound = *shape.get(axis).unwrap_or(&0);
        if axis >= shape.len() || start >= end || end > bound {
            return Err(TensorError::OutOfBounds {
                op: "slice",
                index: end,
                bound,
            });
        }
        match (shape.len(), axis) {
            (1, 0) => {
                let data = self.data()[start..end].to_vec();
                let n = self.numel();
                Ok(Tensor::new_node(
                    vec![end - start],
                    data,
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        ps[0].with_grad_mut(|pg| {
                            debug_assert_eq!(pg.len(), n);
                            for (i, gi) in g.iter().enumerate() {
                                pg[start + i] += gi;
                            }
                        });
                    })),
                ))
            }
            (2, 0) => {
                let cols = shape[1];
                let data = self.data()[start * cols..end * cols].to_vec();
                Ok(Tensor::new_node(
                    vec![end - start, cols],
                    data,
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        ps[0].with_grad_mut(|pg| {
                            for (i, gi) in g.iter().enumerate() {
                                pg[start * cols + i] += gi;
                            }
                        });
                    })),
                ))
            }
            (2, 1) => {
                let rows = shape[0];
                let cols = shape[1];
                let width = end - start;
                let src = self.data();
                let mut data = vec![0.0; rows * width];
                for r in 0..rows {
                    data[r * width..(r + 1) * width]
                        .copy_from_slice(&src[r * cols + start..r * cols + end]);
                }
                Ok(Tensor::new_node(
                    vec![rows, width],
                    data,
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        ps[0].with_grad_mut(|pg| {
                            for r in 0..rows {
                                for c in 0..width {
                                    pg[r * cols + start + c] += g[r * width + c];
                                }
                            }
                        });
                    })),
                ))
            }
            _ => Err(TensorError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("unsupported axis {axis}"),
            }),
        }
    }

    /// Row `i` of a 2-d tensor as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        let (m, n) = self.rows_cols("row")?;
        if i >= m {
            return Err(TensorError::OutOfBounds {
                op: "row",
                index: i,
                bound: m,
            });
        }
        self.slice(0, i, i + 1)?.reshape(vec![n])
    }

    // ---- reductions -------------------------------------------------------------

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor> {
        match (self.shape(), axis) {
            ([n], 0) => {
                let len = *n;
                let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                let total: f64 = self.data().iter().sum::<f64>() * scale;
                Ok(Tensor::new_node(
                    vec![1],
                    vec![total],
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice()[0] * scale;
                        ps[0].with_grad_mut(|pg| {
                            for pgi in pg.iter_mut() {
                                *pgi += g;
                            }
                        });
                    })),
                ))
            }
            ([m, n], 0) => {
                let (m, n) = (*m, *n);
                let scale = if mean { 1.0 / m as f64 } else { 1.0 };
                let a = self.data();
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        out[j] += a[i * n + j];
                    }
                }
                for o in out.iter_mut() {
                    *o *= scale;
                }
                Ok(Tensor::new_node(
                    vec![n],
                    out,
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        ps[0].with_grad_mut(|pg| {
                            for i in 0..m {
                                for j in 0..n {
                                    pg[i * n + j] += g[j] * scale;
                                }
                            }
                        });
                    })),
                ))
            }
            ([m, n], 1) => {
                let (m, n) = (*m, *n);
                let scale = if mean { 1.0 / n as f64 } else { 1.0 };
                let a = self.data();
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += a[i * n + j];
                    }
                    out[i] = acc * scale;
                }
                Ok(Tensor::new_node(
                    vec![m],
                    out,
                    vec![self.clone()],
                    Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                        let g = out.grad_slice();
                        ps[0].with_grad_mut(|pg| {
                            for i in 0..m {
                                let gi = g[i] * scale;
                                for j in 0..n {
                                    pg[i * n + j] += gi;
                                }
                            }
                        });
                    })),
                ))
            }
            _ => Err(TensorError::InvalidShape {
                op: if mean { "mean_axis" } else { "sum_axis" },
                shape: self.shape().to_vec(),
                reason: format!("unsupported axis {axis}"),
            }),
        }
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::new_node(
            vec![1],
            vec![total],
            vec![self.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice()[0];
                ps[0].with_grad_mut(|pg| {
                    for pgi in pg.iter_mut() {
                        *pgi += g;
                    }
                });
            })),
        )
    }

    // ---- elementwise nonlinearities ----------------------------------------------

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.tanh()).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                let y = &out.data;
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            })),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| sigmoid_f(*x)).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                let y = &out.data;
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            })),
        )
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.exp()).collect();
        Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Some(Box::new(|out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                let y = &out.data;
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += g[i] * y[i];
                    }
                });
            })),
        )
    }

    /// Softmax along `axis`, computed with max subtraction. 1-d tensors
    /// normalize over the whole vector; 2-d tensors over rows (axis 1) or
    /// columns (axis 0).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (groups, stride, len) = match (self.shape(), axis) {
            ([_], 0) => (1usize, 1usize, self.numel()),
            ([m, n], 1) => (*m, 1, *n),
            ([m, n], 0) => (*n, *n, *m),
            _ => {
                return Err(TensorError::InvalidShape {
                    op: "softmax",
                    shape: self.shape().to_vec(),
                    reason: format!("unsupported axis {axis}"),
                })
            }
        };
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let group_starts: Vec<usize> = match (self.shape().len(), axis) {
            (1, _) => vec![0],
            (2, 1) => (0..groups).map(|g| g * len).collect(),
            _ => (0..groups).collect(),
        };
        for &start in &group_starts {
            let idx = |i: usize| start + i * stride;
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(x[idx(i)]);
            }
            let mut total = 0.0;
            for i in 0..len {
                let e = (x[idx(i)] - max).exp();
                out[idx(i)] = e;
                total += e;
            }
            for i in 0..len {
                out[idx(i)] /= total;
            }
        }
        let gs = group_starts.clone();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                let y = &out.data;
                ps[0].with_grad_mut(|pg| {
                    for &start in &gs {
                        let idx = |i: usize| start + i * stride;
                        let mut dot = 0.0;
                        for i in 0..len {
                            dot += g[idx(i)] * y[idx(i)];
                        }
                        for i in 0..len {
                            pg[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                        }
                    }
                });
            })),
        ))
    }

    // ---- embedding and regularization ---------------------------------------------

    /// Gathers rows of an embedding table into a `[len(indices), dim]` matrix.
    /// Gradients scatter-add back into the table rows.
    pub fn lookup_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (vocab, dim) = self.rows_cols("lookup_rows")?;
        for &i in indices {
            if i >= vocab {
                return Err(TensorError::OutOfBounds {
                    op: "lookup_rows",
                    index: i,
                    bound: vocab,
                });
            }
        }
        let table = self.data();
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&table[i * dim..(i + 1) * dim]);
        }
        let idx: Vec<usize> = indices.to_vec();
        Ok(Tensor::new_node(
            vec![indices.len(), dim],
            data,
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    for (t, &i) in idx.iter().enumerate() {
                        for j in 0..dim {
                            pg[i * dim + j] += g[t * dim + j];
                        }
                    }
                });
            })),
        ))
    }

    /// Single table row as a vector.
    pub fn lookup_row(&self, index: usize) -> Result<Tensor> {
        let (_, dim) = self.rows_cols("lookup_row")?;
        self.lookup_rows(&[index])?.reshape(vec![dim])
    }

    /// Applies a precomputed inverted-dropout mask (entries 0 or 1/(1-rate)).
    pub fn dropout(&self, mask: &[f64]) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(TensorError::InvalidShape {
                op: "dropout",
                shape: self.shape().to_vec(),
                reason: format!("mask has {} entries", mask.len()),
            });
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(mask)
            .map(|(x, m)| x * m)
            .collect();
        let mask = mask.to_vec();
        Ok(Tensor::new_node(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice();
                ps[0].with_grad_mut(|pg| {
                    for i in 0..pg.len() {
                        pg[i] += g[i] * mask[i];
                    }
                });
            })),
        ))
    }

    /// Binary cross-entropy of a probability against a (possibly smoothed)
    /// target, as a scalar. Scores at exactly 0 or 1 are clamped to
    /// [1e-12, 1-1e-12] rather than rejected.
    pub fn bce(&self, target: f64) -> Result<Tensor> {
        if !self.is_scalar() {
            return Err(TensorError::InvalidShape {
                op: "bce",
                shape: self.shape().to_vec(),
                reason: "expected a scalar score".into(),
            });
        }
        let s = clamp_prob(self.data()[0]);
        let loss = -(target * s.ln() + (1.0 - target) * (1.0 - s).ln());
        Ok(Tensor::new_node(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Some(Box::new(move |out: &Node, ps: &[Tensor]| {
                let g = out.grad_slice()[0];
                let s = clamp_prob(ps[0].data()[0]);
                ps[0].with_grad_mut(|pg| {
                    pg[0] += g * (s - target) / (s * (1.0 - s));
                });
            })),
        ))
    }

    // ---- backward ----------------------------------------------------------------

    /// Runs reverse-mode differentiation from a scalar loss, accumulating
    /// gradients into every reachable tensor that requires grad.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::NoGradPath);
        }
        self.accumulate_grad(&[1.0]);
        let tape = Tape::trace(self);
        for t in tape.order.iter().rev() {
            // Allocation here guarantees "fully accumulated grad" even for
            // nodes whose only contributions are zero.
            t.with_grad_mut(|_| {});
            if let Some(bw) = &t.inner.backward {
                bw(&t.inner, &t.inner.parents);
            }
        }
        Ok(())
    }
}

impl Node {
    fn grad_slice(&self) -> Ref<'_, Vec<f64>> {
        Ref::map(self.grad.borrow(), |g| {
            g.as_ref().expect("gradient present during backward replay")
        })
    }
}

fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(1e-12, 1.0 - 1e-12)
}

/// The recorded computation in dependency order: every operation appears
/// after all operations producing its inputs. Built by tracing backwards
/// from a root; replaying in reverse visits each node exactly once.
pub struct Tape {
    order: Vec<Tensor>,
}

impl Tape {
    /// Collects the grad-relevant subgraph under `root` in topological order.
    pub fn trace(root: &Tensor) -> Tape {
        enum Frame {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut order = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![Frame::Enter(root.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !seen.insert(t.node_id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.inner.parents {
                        if p.requires_grad() && !seen.contains(&p.node_id()) {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of a tensor in the tape, if recorded.
    pub fn position(&self, t: &Tensor) -> Option<usize> {
        self.order.iter().position(|o| o.node_id() == t.node_id())
    }

    /// Input positions of the node at `index`, for order checks.
    pub fn parent_positions(&self, index: usize) -> Vec<usize> {
        self.order[index]
            .inner
            .parents
            .iter()
            .filter_map(|p| self.position(p))
            .collect()
    }
}

/// Samples an inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise 1/(1-rate). A rate of 0 yields an all-ones mask without
/// consuming randomness.
pub fn dropout_mask<R: rand::Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central finite differences against analytic gradients for a scalar
    /// function of several leaf tensors. Relative error uses
    /// |a - n| / max(1, |a| + |n|).
    fn fd_check(
        build: impl Fn(&[Tensor]) -> Tensor,
        shapes: &[Vec<usize>],
        seed: u64,
        tol: f64,
    ) {
        fd_check_in(build, shapes, seed, tol, -1.0..1.0)
    }

    fn fd_check_in(
        build: impl Fn(&[Tensor]) -> Tensor,
        shapes: &[Vec<usize>],
        seed: u64,
        tol: f64,
        range: std::ops::Range<f64>,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| {
                (0..numel_of(s))
                    .map(|_| rng.gen_range(range.clone()))
                    .collect()
            })
            .collect();
        let leaves: Vec<Tensor> = shapes
            .iter()
            .zip(&values)
            .map(|(s, v)| Tensor::param(s.clone(), v.clone()).unwrap())
            .collect();
        let loss = build(&leaves);
        assert!(loss.is_scalar(), "fd_check needs a scalar loss");
        loss.backward().unwrap();
        let analytic: Vec<Vec<f64>> = leaves.iter().map(|l| l.grad().unwrap()).collect();

        let eval = |values: &[Vec<f64>]| -> f64 {
            let leaves: Vec<Tensor> = shapes
                .iter()
                .zip(values)
                .map(|(s, v)| Tensor::param(s.clone(), v.clone()).unwrap())
                .collect();
            build(&leaves).item().unwrap()
        };

        let h = 1e-5;
        for (pi, shape) in shapes.iter().enumerate() {
            for i in 0..numel_of(shape) {
                let orig = values[pi][i];
                values[pi][i] = orig + h;
                let up = eval(&values);
                values[pi][i] = orig - h;
                let down = eval(&values);
                values[pi][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[pi][i];
                let rel = (a - numeric).abs() / 1.0_f64.max(a.abs() + numeric.abs());
                assert!(
                    rel < tol,
                    "param {pi} elem {i}: analytic {a} vs numeric {numeric} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn softmax_of_single_element_is_one() {
        for x in [-3.0, 0.0, 7.5] {
            let t = Tensor::vector(vec![x]).softmax(0).unwrap();
            assert_eq!(t.data(), &[1.0]);
        }
    }

    #[test]
    fn tanh_and_sigmoid_at_zero() {
        let t = Tensor::vector(vec![0.0]);
        assert_eq!(t.tanh().data()[0], 0.0);
        assert_eq!(t.sigmoid().data()[0], 0.5);
    }

    #[test]
    fn matmul_matches_triple_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = randv(&mut rng, 6);
        let b = randv(&mut rng, 6);
        let ta = Tensor::from_vec(vec![2, 3], a.clone()).unwrap();
        let tb = Tensor::from_vec(vec![3, 2], b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        let mut expected = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..3 {
                    expected[i * 2 + j] += a[i * 3 + p] * b[p * 2 + j];
                }
            }
        }
        for (got, want) in c.data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let x = Tensor::param(vec![4], vec![0.3, -0.7, 2.0, 1.5]).unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn sigmoid_of_dot_at_zero_weights_gives_quarter_x() {
        let x = vec![0.4, -1.2, 0.9];
        let w = Tensor::param(vec![3], vec![0.0; 3]).unwrap();
        let xt = Tensor::vector(x.clone());
        let loss = w.dot(&xt).unwrap().sigmoid();
        loss.backward().unwrap();
        let g = w.grad().unwrap();
        for i in 0..3 {
            assert!((g[i] - 0.25 * x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = x.tanh();
        match y.backward() {
            Err(TensorError::NonScalarLoss(shape)) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_error_names_op_and_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // loss = sum(x*x) + sum(x): grad = 2x + 1, x reachable twice.
        let x = Tensor::param(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all().add(&x.sum_all()).unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!((gi - (2.0 * xi + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_orders_inputs_before_outputs() {
        let x = Tensor::param(vec![2], vec![0.1, 0.2]).unwrap();
        let y = x.tanh();
        let z = y.mul(&x).unwrap();
        let loss = z.sum_all();
        let tape = Tape::trace(&loss);
        assert_eq!(tape.len(), 4);
        for i in 0..tape.len() {
            for p in tape.parent_positions(i) {
                assert!(p < i, "parent at {p} not before node at {i}");
            }
        }
        assert_eq!(tape.position(&loss), Some(tape.len() - 1));
    }

    #[test]
    fn softmax_outputs_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..9);
            let t = Tensor::vector(randv(&mut rng, n)).softmax(0).unwrap();
            let total: f64 = t.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(t.data().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn softmax_2d_rows_and_cols() {
        let t = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let rows = t.softmax(1).unwrap();
        for r in 0..2 {
            let s: f64 = rows.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let cols = t.softmax(0).unwrap();
        for c in 0..3 {
            let s: f64 = cols.data()[c] + cols.data()[3 + c];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::vector(randv(&mut rng, 16));
        let mask = dropout_mask(16, 0.0, &mut rng);
        let a = x.dropout(&mask).unwrap();
        let b = x.dropout(&mask).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data(), x.data());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mask = dropout_mask(1000, 0.25, &mut rng);
        let keep = 1.0 / 0.75;
        assert!(mask.iter().all(|&m| m == 0.0 || (m - keep).abs() < 1e-15));
        let zeros = mask.iter().filter(|&&m| m == 0.0).count();
        assert!(zeros > 150 && zeros < 350, "{zeros} zeroed of 1000");
    }

    #[test]
    fn bce_clamps_degenerate_scores() {
        let s = Tensor::scalar(0.0);
        let loss = s.bce(1.0).unwrap().item().unwrap();
        assert!(loss.is_finite());
        let s = Tensor::scalar(1.0);
        assert!(s.bce(0.0).unwrap().item().unwrap().is_finite());
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        // tanh(W x) . sigmoid(y) + sum(softmax(x)) exercised through one loss.
        fd_check(
            |ts| {
                let h = ts[0].reshape(vec![3, 3]).unwrap().matvec(&ts[1]).unwrap();
                let left = h.tanh().dot(&ts[2].sigmoid()).unwrap();
                let right = ts[1].softmax(0).unwrap().mul(&ts[1]).unwrap().sum_all();
                left.add(&right).unwrap()
            },
            &[vec![9], vec![3], vec![3]],
            21,
            1e-6,
        );
    }

    // Per-op finite-difference checks: analytic gradient of every op matches
    // central differences (step 1e-5) within 1e-6 on random inputs in [-1, 1].

    #[test]
    fn fd_add_sub_mul() {
        fd_check(
            |ts| {
                ts[0]
                    .add(&ts[1])
                    .unwrap()
                    .mul(&ts[0].sub(&ts[1]).unwrap())
                    .unwrap()
                    .sum_all()
            },
            &[vec![5], vec![5]],
            1,
            1e-6,
        );
    }

    #[test]
    fn fd_matmul() {
        fd_check(
            |ts| ts[0].matmul(&ts[1]).unwrap().tanh().sum_all(),
            &[vec![2, 3], vec![3, 4]],
            2,
            1e-6,
        );
    }

    #[test]
    fn fd_matvec_and_dot() {
        fd_check(
            |ts| {
                let y = ts[0].matvec(&ts[1]).unwrap();
                y.dot(&ts[2]).unwrap()
            },
            &[vec![3, 4], vec![4], vec![3]],
            3,
            1e-6,
        );
    }

    #[test]
    fn fd_transpose() {
        fd_check(
            |ts| ts[0].transpose().unwrap().matvec(&ts[1]).unwrap().sum_all(),
            &[vec![3, 2], vec![3]],
            4,
            1e-6,
        );
    }

    #[test]
    fn fd_concat_axis0_and_slice() {
        fd_check(
            |ts| {
                let c = Tensor::concat(&[ts[0].clone(), ts[1].clone()], 0).unwrap();
                c.slice(0, 1, 5).unwrap().tanh().sum_all()
            },
            &[vec![3], vec![3]],
            5,
            1e-6,
        );
    }

    #[test]
    fn fd_concat_2d_both_axes() {
        fd_check(
            |ts| {
                let rows = Tensor::concat(&[ts[0].clone(), ts[1].clone()], 0).unwrap();
                let cols = Tensor::concat(&[ts[0].clone(), ts[1].clone()], 1).unwrap();
                rows.sum_all().add(&cols.tanh().sum_all()).unwrap()
            },
            &[vec![2, 3], vec![2, 3]],
            6,
            1e-6,
        );
    }

    #[test]
    fn fd_slice_2d() {
        fd_check(
            |ts| {
                let r = ts[0].slice(0, 0, 2).unwrap().sum_all();
                let c = ts[0].slice(1, 1, 3).unwrap().sigmoid().sum_all();
                r.add(&c).unwrap()
            },
            &[vec![3, 3]],
            7,
            1e-6,
        );
    }

    #[test]
    fn fd_stack_rows_and_row() {
        fd_check(
            |ts| {
                let m = Tensor::stack_rows(&[ts[0].clone(), ts[1].clone()]).unwrap();
                m.row(0).unwrap().dot(&m.row(1).unwrap()).unwrap()
            },
            &[vec![4], vec![4]],
            8,
            1e-6,
        );
    }

    #[test]
    fn fd_reductions() {
        fd_check(
            |ts| {
                let s0 = ts[0].sum_axis(0).unwrap().tanh().sum_all();
                let m1 = ts[0].mean_axis(1).unwrap().sigmoid().sum_all();
                let v = ts[1].mean_axis(0).unwrap();
                s0.add(&m1).unwrap().add(&v).unwrap()
            },
            &[vec![3, 4], vec![5]],
            9,
            1e-6,
        );
    }

    #[test]
    fn fd_activations_and_exp() {
        fd_check(
            |ts| {
                ts[0]
                    .tanh()
                    .add(&ts[0].sigmoid())
                    .unwrap()
                    .add(&ts[0].exp())
                    .unwrap()
                    .sum_all()
            },
            &[vec![6]],
            10,
            1e-6,
        );
    }

    #[test]
    fn fd_softmax_1d_and_2d() {
        fd_check(
            |ts| {
                let a = ts[0].softmax(0).unwrap().dot(&ts[0]).unwrap();
                let b = ts[1].softmax(1).unwrap().mul(&ts[1]).unwrap().sum_all();
                let c = ts[1].softmax(0).unwrap().tanh().sum_all();
                a.add(&b).unwrap().add(&c).unwrap()
            },
            &[vec![5], vec![3, 4]],
            11,
            1e-6,
        );
    }

    #[test]
    fn fd_lookup_rows() {
        fd_check(
            |ts| {
                let rows = ts[0].lookup_rows(&[2, 0, 2]).unwrap();
                rows.tanh().sum_all()
            },
            &[vec![4, 3]],
            12,
            1e-6,
        );
    }

    #[test]
    fn fd_scale_and_scale_by() {
        fd_check(
            |ts| {
                let s = ts[1].sum_axis(0).unwrap();
                ts[0].scale(0.37).add(&ts[0].scale_by(&s).unwrap()).unwrap().sum_all()
            },
            &[vec![4], vec![2]],
            13,
            1e-6,
        );
    }

    #[test]
    fn fd_dropout_mask_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mask = dropout_mask(6, 0.5, &mut rng);
        fd_check(
            move |ts| ts[0].dropout(&mask).unwrap().tanh().sum_all(),
            &[vec![6]],
            14,
            1e-6,
        );
    }

    #[test]
    fn fd_bce() {
        // Scores kept in (0.1, 0.9) to stay clear of the clamp.
        fd_check_in(
            |ts| {
                let l1 = ts[0].slice(0, 0, 1).unwrap().bce(1.0).unwrap();
                let l0 = ts[0].slice(0, 1, 2).unwrap().bce(0.0).unwrap();
                let ls = ts[0].slice(0, 2, 3).unwrap().bce(0.95).unwrap();
                l1.add(&l0).unwrap().add(&ls).unwrap()
            },
            &[vec![3]],
            15,
            1e-6,
            0.1..0.9,
        );
    }

    #[test]
    fn fd_reshape() {
        fd_check(
            |ts| {
                ts[0]
                    .reshape(vec![2, 3])
                    .unwrap()
                    .matvec(&ts[1])
                    .unwrap()
                    .sum_all()
            },
            &[vec![6], vec![3]],
            16,
            1e-6,
        );
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let mut t = Tensor::param(vec![4], vec![0.1; 4]).unwrap();
        for _ in 0..200_000 {
            t = t.scale(1.0);
        }
        drop(t);
    }
}
