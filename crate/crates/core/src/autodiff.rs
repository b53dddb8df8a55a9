//! Dense arrays and a tape-based reverse-mode differentiation engine.
//!
//! Every primitive appends one node to a [`Tape`] holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints.
//!
//! Batched quantities are stored feature-major: a `Matrix(rows, cols)` holds
//! one feature per row and one Monte Carlo path per column, so the affine
//! layers reduce to row-wise axpy loops over the batch.
//!
//! Kink conventions: `d/dx x⁺` is 1 only for `x > 0`, `d/dx |x|` is `sign(x)`
//! with 0 at 0, and `d/dx clip(x, a, b)` is 1 only strictly inside `(a, b)`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows used for per-row bound broadcasting. A vector has one row per entry.
    pub fn rows(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Matrix(_, c) => c,
            _ => 1,
        }
    }

    #[inline]
    fn row_of(&self, flat: usize) -> usize {
        match *self {
            Shape::Matrix(_, c) => flat / c,
            Shape::Vector(_) => flat,
            Shape::Scalar => 0,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// A 64-bit dense array: scalar, vector, or row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct NumArray {
    shape: Shape,
    data: Vec<f64>,
}

impl NumArray {
    pub fn scalar(value: f64) -> Self {
        NumArray {
            shape: Shape::Scalar,
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        NumArray {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "matrix",
                detail: format!("{} entries for {rows}x{cols}", data.len()),
            });
        }
        Ok(NumArray {
            shape: Shape::Matrix(rows, cols),
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        NumArray {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        NumArray {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single entry of a scalar.
    pub fn as_scalar(&self) -> Option<f64> {
        match self.shape {
            Shape::Scalar => Some(self.data[0]),
            _ => None,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.shape.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    PosPart(NodeId),
    Abs(NodeId),
    Clip {
        input: NodeId,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Variance(NodeId),
    AddColumn(NodeId, NodeId),
    SumRows(NodeId),
    DivColumns(NodeId, NodeId),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    RowAffine {
        input: NodeId,
        scale: Vec<f64>,
    },
    Segment {
        input: NodeId,
        start: usize,
    },
    TailMean {
        input: NodeId,
        selected: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatVec(..) => "matvec",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::PosPart(_) => "pos_part",
            Op::Abs(_) => "abs",
            Op::Clip { .. } => "clip",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Variance(_) => "variance",
            Op::AddColumn(..) => "add_column",
            Op::SumRows(_) => "sum_rows",
            Op::DivColumns(..) => "div_columns",
            Op::Row(..) => "row",
            Op::StackRows(_) => "stack_rows",
            Op::RowAffine { .. } => "row_affine",
            Op::Segment { .. } => "segment",
            Op::TailMean { .. } => "tail_mean",
        }
    }
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatVec(a, b)
            | Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddColumn(a, b)
            | Op::DivColumns(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::PosPart(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Variance(a)
            | Op::SumRows(a)
            | Op::Row(a, _) => vec![*a],
            Op::Clip { input, .. }
            | Op::RowAffine { input, .. }
            | Op::Segment { input, .. }
            | Op::TailMean { input, .. } => vec![*input],
            Op::StackRows(rows) => rows.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: NumArray,
    /// Whether any leaf upstream takes gradients.
    grad: bool,
}

/// Recorded computation graph. Nodes only reference earlier nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_bounds(op: &'static str, shape: Shape, bound: &[f64]) -> Result<()> {
    if bound.len() == 1 || bound.len() == shape.rows() {
        Ok(())
    } else {
        Err(mismatch(
            op,
            format!("{} per-row bounds for {shape}", bound.len()),
        ))
    }
}

#[inline]
fn bound_at(bound: &[f64], row: usize) -> f64 {
    if bound.len() == 1 {
        bound[0]
    } else {
        bound[row]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &NumArray {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape
    }

    /// Scalar value of a node; panics on non-scalar nodes.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)
            .as_scalar()
            .expect("scalar() called on a non-scalar node")
    }

    /// Records an input (parameter or constant). Gradients are reported for leaves.
    pub fn leaf(&mut self, value: NumArray) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives an adjoint; backward skips everything
    /// computed from constants alone.
    pub fn constant(&mut self, value: NumArray) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: NumArray) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let grad = op.inputs().iter().any(|id| self.nodes[id.0].grad);
        self.nodes.push(Node { op, value, grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    fn zip_with(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let shape = self.same_shape(op.name(), a, b)?;
        let data = self.value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, NumArray { shape, data })
    }

    fn map(&mut self, op: Op, a: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let v = self.value(a);
        let value = NumArray {
            shape: v.shape,
            data: v.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.map(Op::Scale(a, factor), a, |x| factor * x)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(Op::Offset(a), a, |x| x + c)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(Op::Tanh(a), a, tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn pos_part(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(Op::PosPart(a), a, |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(Op::Abs(a), a, f64::abs)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(Op::Square(a), a, |x| x * x)
    }

    /// Clips into `[lo, hi]`. Bounds hold one value or one value per row.
    pub fn clip(&mut self, a: NodeId, lo: Vec<f64>, hi: Vec<f64>) -> Result<NodeId> {
        let shape = self.shape(a);
        check_bounds("clip", shape, &lo)?;
        check_bounds("clip", shape, &hi)?;
        let data = self
            .value(a)
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let r = shape.row_of(k);
                x.min(bound_at(&hi, r)).max(bound_at(&lo, r))
            })
            .collect();
        self.push(Op::Clip { input: a, lo, hi }, NumArray { shape, data })
    }

    /// `offset[row] + scale[row] * x`, bounds broadcast as in [`Tape::clip`].
    pub fn row_affine(&mut self, a: NodeId, offset: Vec<f64>, scale: Vec<f64>) -> Result<NodeId> {
        let shape = self.shape(a);
        check_bounds("row_affine", shape, &offset)?;
        check_bounds("row_affine", shape, &scale)?;
        let data = self
            .value(a)
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let r = shape.row_of(k);
                bound_at(&offset, r) + bound_at(&scale, r) * x
            })
            .collect();
        self.push(
            Op::RowAffine { input: a, scale },
            NumArray { shape, data },
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), NumArray::scalar(s))
    }

    /// Mean over all entries (the batch mean for a vector of paths).
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(mismatch("mean", "empty input".into()));
        }
        let m = v.data.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(a), NumArray::scalar(m))
    }

    /// Biased variance `(1/B) Σ (x - x̄)²` over all entries.
    pub fn variance(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(mismatch("variance", "empty input".into()));
        }
        let var = biased_variance(&v.data);
        self.push(Op::Variance(a), NumArray::scalar(var))
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let (r, c) = match (sm, sv) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => (r, c),
            _ => return Err(mismatch("matvec", format!("{sm} x {sv}"))),
        };
        let (mm, vv) = (&self.value(m).data, &self.value(v).data);
        let data = (0..r).map(|i| dot(&mm[i * c..(i + 1) * c], vv)).collect();
        self.push(Op::MatVec(m, v), NumArray::vector(data))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (r, k, c) = match (sa, sb) {
            (Shape::Matrix(r, k), Shape::Matrix(k2, c)) if k == k2 => (r, k, c),
            _ => return Err(mismatch("matmul", format!("{sa} x {sb}"))),
        };
        let (aa, bb) = (&self.value(a).data, &self.value(b).data);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            for l in 0..k {
                axpy(aa[i * k + l], &bb[l * c..(l + 1) * c], row);
            }
        }
        self.push(Op::MatMul(a, b), NumArray::matrix(r, c, out)?)
    }

    /// Adds `v[row]` to every entry of the row (bias broadcast over the batch).
    pub fn add_column(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let (r, c) = match (sm, sv) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == r => (r, c),
            _ => return Err(mismatch("add_column", format!("{sm} + {sv}"))),
        };
        let mut data = self.value(m).data.clone();
        let vv = &self.value(v).data;
        for i in 0..r {
            for x in &mut data[i * c..(i + 1) * c] {
                *x += vv[i];
            }
        }
        self.push(Op::AddColumn(m, v), NumArray::matrix(r, c, data)?)
    }

    /// Column sums of a matrix: one value per path.
    pub fn sum_rows(&mut self, m: NodeId) -> Result<NodeId> {
        let (r, c) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(mismatch("sum_rows", format!("{s}"))),
        };
        let mm = &self.value(m).data;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(&mm[i * c..(i + 1) * c]) {
                *o += x;
            }
        }
        self.push(Op::SumRows(m), NumArray::vector(out))
    }

    /// Divides column `j` by `v[j]`.
    pub fn div_columns(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        let (r, c) = match (sm, sv) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if n == c => (r, c),
            _ => return Err(mismatch("div_columns", format!("{sm} / {sv}"))),
        };
        let vv = &self.value(v).data;
        let mut data = self.value(m).data.clone();
        for i in 0..r {
            for (x, d) in data[i * c..(i + 1) * c].iter_mut().zip(vv) {
                *x /= d;
            }
        }
        self.push(Op::DivColumns(m, v), NumArray::matrix(r, c, data)?)
    }

    pub fn row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        let s = self.shape(m);
        match s {
            Shape::Matrix(r, _) if i < r => {}
            _ => return Err(mismatch("row", format!("row {i} of {s}"))),
        }
        let data = self.value(m).row(i).to_vec();
        self.push(Op::Row(m, i), NumArray::vector(data))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows
            .first()
            .ok_or_else(|| mismatch("stack_rows", "no rows".into()))?;
        let c = match self.shape(first) {
            Shape::Vector(c) => c,
            s => return Err(mismatch("stack_rows", format!("row shape {s}"))),
        };
        let mut data = Vec::with_capacity(rows.len() * c);
        for &id in rows {
            let s = self.shape(id);
            if s != Shape::Vector(c) {
                return Err(mismatch("stack_rows", format!("{s} vs [{c}]")));
            }
            data.extend_from_slice(&self.value(id).data);
        }
        self.push(
            Op::StackRows(rows.to_vec()),
            NumArray::matrix(rows.len(), c, data)?,
        )
    }

    /// Contiguous slice `[start, start + len)` of a vector.
    pub fn segment(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a);
        match s {
            Shape::Vector(n) if start + len <= n && len > 0 => {}
            _ => {
                return Err(mismatch(
                    "segment",
                    format!("[{start}, {}) of {s}", start + len),
                ))
            }
        }
        let data = self.value(a).data[start..start + len].to_vec();
        self.push(Op::Segment { input: a, start }, NumArray::vector(data))
    }

    /// Mean of the `k` largest entries of a vector. Ties are broken by index so
    /// the selection is deterministic; gradient flows to the selected entries.
    pub fn tail_mean(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let v = self.value(a);
        let n = match v.shape {
            Shape::Vector(n) => n,
            s => return Err(mismatch("tail_mean", format!("{s}"))),
        };
        if k == 0 || k > n {
            return Err(mismatch("tail_mean", format!("k = {k} for {n} entries")));
        }
        let selected = largest_indices(&v.data, k);
        let m = selected.iter().map(|&i| v.data[i]).sum::<f64>() / k as f64;
        self.push(Op::TailMean { input: a, selected }, NumArray::scalar(m))
    }

    /// Reverse pass seeded with `d seed / d seed = 1`.
    pub fn backward(&self, seed: NodeId) -> Result<Gradients> {
        let shape = self.shape(seed);
        if shape != Shape::Scalar {
            return Err(Error::SeedNotScalar(shape.to_string()));
        }
        let mut adj: Vec<Option<NumArray>> = vec![None; seed.0 + 1];
        adj[seed.0] = Some(NumArray::scalar(1.0));
        for i in (0..=seed.0).rev() {
            let (lower, upper) = adj.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            self.propagate(i, g, lower);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, i: usize, g: &NumArray, adj: &mut [Option<NumArray>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        let gd = &g.data;
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| axpy(1.0, gd, s));
                accumulate(&self.nodes, adj, *b, val(*b).shape, |s| axpy(1.0, gd, s));
            }
            Op::Sub(a, b) => {
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| axpy(1.0, gd, s));
                accumulate(&self.nodes, adj, *b, val(*b).shape, |s| axpy(-1.0, gd, s));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        s[k] += gd[k] * vb[k];
                    }
                });
                accumulate(&self.nodes, adj, *b, val(*b).shape, |s| {
                    for k in 0..s.len() {
                        s[k] += gd[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        s[k] += gd[k] / vb[k];
                    }
                });
                accumulate(&self.nodes, adj, *b, val(*b).shape, |s| {
                    for k in 0..s.len() {
                        s[k] -= gd[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::Scale(a, c) => accumulate(&self.nodes, adj, *a, val(*a).shape, |s| axpy(*c, gd, s)),
            Op::Offset(a) => accumulate(&self.nodes, adj, *a, val(*a).shape, |s| axpy(1.0, gd, s)),
            Op::Tanh(a) => accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                for k in 0..s.len() {
                    s[k] += gd[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Sigmoid(a) => accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                for k in 0..s.len() {
                    s[k] += gd[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::PosPart(a) => {
                let x = &val(*a).data;
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        if x[k] > 0.0 {
                            s[k] += gd[k];
                        }
                    }
                })
            }
            Op::Abs(a) => {
                let x = &val(*a).data;
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        if x[k] > 0.0 {
                            s[k] += gd[k];
                        } else if x[k] < 0.0 {
                            s[k] -= gd[k];
                        }
                    }
                })
            }
            Op::Clip { input, lo, hi } => {
                let xv = val(*input);
                let shape = xv.shape;
                accumulate(&self.nodes, adj, *input, shape, |s| {
                    for k in 0..s.len() {
                        let r = shape.row_of(k);
                        let x = xv.data[k];
                        if x > bound_at(lo, r) && x < bound_at(hi, r) {
                            s[k] += gd[k];
                        }
                    }
                })
            }
            Op::RowAffine { input, scale, .. } => {
                let shape = val(*input).shape;
                accumulate(&self.nodes, adj, *input, shape, |s| {
                    for k in 0..s.len() {
                        s[k] += gd[k] * bound_at(scale, shape.row_of(k));
                    }
                })
            }
            Op::Square(a) => {
                let x = &val(*a).data;
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        s[k] += 2.0 * x[k] * gd[k];
                    }
                })
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| s.iter_mut().for_each(|v| *v += g0))
            }
            Op::Mean(a) => {
                let g0 = gd[0] / val(*a).len() as f64;
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| s.iter_mut().for_each(|v| *v += g0))
            }
            Op::Variance(a) => {
                let x = &val(*a).data;
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let c = 2.0 * gd[0] / n;
                accumulate(&self.nodes, adj, *a, val(*a).shape, |s| {
                    for k in 0..s.len() {
                        s[k] += c * (x[k] - mean);
                    }
                })
            }
            Op::MatVec(m, v) => {
                let (mv, vv) = (val(*m), val(*v));
                let c = mv.shape.cols();
                accumulate(&self.nodes, adj, *m, mv.shape, |s| {
                    for (r, &gr) in gd.iter().enumerate() {
                        axpy(gr, &vv.data, &mut s[r * c..(r + 1) * c]);
                    }
                });
                accumulate(&self.nodes, adj, *v, vv.shape, |s| {
                    for (r, &gr) in gd.iter().enumerate() {
                        axpy(gr, &mv.data[r * c..(r + 1) * c], s);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (r, k) = (av.shape.rows(), av.shape.cols());
                let c = bv.shape.cols();
                accumulate(&self.nodes, adj, *a, av.shape, |s| {
                    for i in 0..r {
                        let grow = &gd[i * c..(i + 1) * c];
                        for l in 0..k {
                            s[i * k + l] += dot(grow, &bv.data[l * c..(l + 1) * c]);
                        }
                    }
                });
                accumulate(&self.nodes, adj, *b, bv.shape, |s| {
                    for i in 0..r {
                        let grow = &gd[i * c..(i + 1) * c];
                        for l in 0..k {
                            axpy(av.data[i * k + l], grow, &mut s[l * c..(l + 1) * c]);
                        }
                    }
                });
            }
            Op::AddColumn(m, v) => {
                let c = val(*m).shape.cols();
                accumulate(&self.nodes, adj, *m, val(*m).shape, |s| axpy(1.0, gd, s));
                accumulate(&self.nodes, adj, *v, val(*v).shape, |s| {
                    for (r, sr) in s.iter_mut().enumerate() {
                        *sr += gd[r * c..(r + 1) * c].iter().sum::<f64>();
                    }
                });
            }
            Op::SumRows(m) => {
                let shape = val(*m).shape;
                let (r, c) = (shape.rows(), shape.cols());
                accumulate(&self.nodes, adj, *m, shape, |s| {
                    for i in 0..r {
                        axpy(1.0, gd, &mut s[i * c..(i + 1) * c]);
                    }
                })
            }
            Op::DivColumns(m, v) => {
                let (mv, vv) = (val(*m), val(*v));
                let (r, c) = (mv.shape.rows(), mv.shape.cols());
                accumulate(&self.nodes, adj, *m, mv.shape, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += gd[i * c + j] / vv.data[j];
                        }
                    }
                });
                accumulate(&self.nodes, adj, *v, vv.shape, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            let d = vv.data[j];
                            s[j] -= gd[i * c + j] * mv.data[i * c + j] / (d * d);
                        }
                    }
                });
            }
            Op::Row(m, row) => {
                let shape = val(*m).shape;
                let c = shape.cols();
                accumulate(&self.nodes, adj, *m, shape, |s| {
                    axpy(1.0, gd, &mut s[row * c..(row + 1) * c])
                })
            }
            Op::StackRows(rows) => {
                let c = node.value.shape.cols();
                for (r, &id) in rows.iter().enumerate() {
                    accumulate(&self.nodes, adj, id, Shape::Vector(c), |s| {
                        axpy(1.0, &gd[r * c..(r + 1) * c], s)
                    });
                }
            }
            Op::Segment { input, start } => {
                let len = gd.len();
                accumulate(&self.nodes, adj, *input, val(*input).shape, |s| {
                    axpy(1.0, gd, &mut s[*start..start + len])
                })
            }
            Op::TailMean { input, selected } => {
                let g0 = gd[0] / selected.len() as f64;
                accumulate(&self.nodes, adj, *input, val(*input).shape, |s| {
                    for &k in selected {
                        s[k] += g0;
                    }
                })
            }
        }
    }
}

fn accumulate(
    nodes: &[Node],
    adj: &mut [Option<NumArray>],
    id: NodeId,
    shape: Shape,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id.0].grad {
        return;
    }
    let slot = adj[id.0].get_or_insert_with(|| NumArray::zeros(shape));
    f(&mut slot.data);
}

/// Adjoints from one backward pass, indexed by node.
pub struct Gradients {
    adjoints: Vec<Option<NumArray>>,
}

impl Gradients {
    /// `None` when the node does not influence the seed.
    pub fn get(&self, id: NodeId) -> Option<&NumArray> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Adjoint of a node, or zeros of `shape` if unreachable.
    pub fn get_or_zeros(&self, id: NodeId, shape: Shape) -> NumArray {
        self.get(id).cloned().unwrap_or_else(|| NumArray::zeros(shape))
    }
}

/// Hyperbolic tangent through a single `exp`: within a few ulps of
/// `f64::tanh` and about twice as fast, which matters in the hidden layers.
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn biased_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Indices of the `k` largest values, largest first; ties go to the lower index.
pub fn largest_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let cmp = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(t: &mut Tape, v: &[f64]) -> NodeId {
        t.leaf(NumArray::vector(v.to_vec()))
    }

    #[test]
    fn add_matvec_tanh_forward() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.0, 2.0]);
        let b = vec_leaf(&mut t, &[3.0, 4.0]);
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);

        let eye = t
            .leaf(NumArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = vec_leaf(&mut t, &[5.0, 7.0]);
        let mv = t.matvec(eye, v).unwrap();
        assert_eq!(t.value(mv).data(), &[5.0, 7.0]);

        let z = vec_leaf(&mut t, &[0.0]);
        let th = t.tanh(z).unwrap();
        assert_eq!(t.value(th).data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.0, 2.0]);
        let b = vec_leaf(&mut t, &[3.0]);
        assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.0]);
        let z = vec_leaf(&mut t, &[0.0]);
        assert!(matches!(t.div(a, z), Err(Error::NonFinite { op: "div" })));
    }

    #[test]
    fn simple_derivatives() {
        let mut t = Tape::new();
        let x = t.leaf(NumArray::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);

        let mut t = Tape::new();
        let x = t.leaf(NumArray::scalar(0.0));
        let y = t.tanh(x).unwrap();
        assert_eq!(t.backward(y).unwrap().get(x).unwrap().data(), &[1.0]);

        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[1.0, 2.0, 3.0]);
        let m = t.mean(x).unwrap();
        let g = t.backward(m).unwrap();
        for v in g.get(x).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_must_be_scalar() {
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::SeedNotScalar(_))));
    }

    #[test]
    fn kink_subgradients() {
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[-1.0, 0.0, 2.0]);
        let p = t.pos_part(x).unwrap();
        let s = t.sum(p).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let a = t.abs(x).unwrap();
        let s = t.sum(a).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[-1.0, 0.0, 1.0]);

        let y = vec_leaf(&mut t, &[0.0, 0.5, 1.0, 1.5, -0.2]);
        let c = t.clip(y, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(t.value(c).data(), &[0.0, 0.5, 1.0, 1.0, 0.0]);
        let s = t.sum(c).unwrap();
        assert_eq!(
            t.backward(s).unwrap().get(y).unwrap().data(),
            &[0.0, 1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn variance_gradient_closed_form() {
        let xs = [0.3, -1.2, 2.0, 0.7];
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &xs);
        let v = t.variance(x).unwrap();
        let mean = xs.iter().sum::<f64>() / 4.0;
        let expect = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert_eq!(t.scalar(v), expect);
        let g = t.backward(v).unwrap();
        for (gi, xi) in g.get(x).unwrap().data().iter().zip(xs) {
            assert!((gi - 0.5 * (xi - mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn tail_mean_selects_largest() {
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[3.0, 9.0, 1.0, 7.0, 9.0]);
        let m = t.tail_mean(x, 2).unwrap();
        assert_eq!(t.scalar(m), 9.0);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.5, 0.0, 0.0, 0.5]);
        assert!(t.tail_mean(x, 0).is_err());
        assert!(t.tail_mean(x, 6).is_err());
    }

    #[test]
    fn batched_ops_forward() {
        let mut t = Tape::new();
        let m = t
            .leaf(NumArray::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = t.sum_rows(m).unwrap();
        assert_eq!(t.value(s).data(), &[5.0, 7.0, 9.0]);
        let d = t.div_columns(m, s).unwrap();
        assert!((t.value(d).at(1, 2) - 6.0 / 9.0).abs() < 1e-15);
        let b = vec_leaf(&mut t, &[10.0, 20.0]);
        let ac = t.add_column(m, b).unwrap();
        assert_eq!(t.value(ac).row(1), &[24.0, 25.0, 26.0]);
        let r = t.row(m, 1).unwrap();
        let r0 = t.row(m, 0).unwrap();
        let st = t.stack_rows(&[r, r0]).unwrap();
        assert_eq!(t.value(st).data(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
        let seg = t.segment(s, 1, 2).unwrap();
        assert_eq!(t.value(seg).data(), &[7.0, 9.0]);
        let ra = t.row_affine(m, vec![1.0, -1.0], vec![2.0, 0.5]).unwrap();
        assert_eq!(t.value(ra).data(), &[3.0, 5.0, 7.0, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let mut t = Tape::new();
        let w = t
            .leaf(NumArray::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.2]).unwrap());
        let x = t
            .leaf(NumArray::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let h = t.matmul(w, x).unwrap();
        let a = t.tanh(h).unwrap();
        let s = t.sum_rows(a).unwrap();
        let v = t.variance(s).unwrap();
        let g1 = t.backward(v).unwrap();
        let g2 = t.backward(v).unwrap();
        assert_eq!(g1.get(w).unwrap(), g2.get(w).unwrap());
        assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
    }

    #[test]
    fn largest_indices_ties_and_order() {
        assert_eq!(largest_indices(&[1.0, 5.0, 5.0, 2.0], 2), vec![1, 2]);
        assert_eq!(largest_indices(&[1.0, 5.0, 3.0], 3), vec![1, 2, 0]);
    }
}
