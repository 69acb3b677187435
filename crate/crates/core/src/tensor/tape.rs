//! Reverse-mode differentiation tape.
//!
//! Ops are methods on [`Tape`]. Each op computes its forward value and, when
//! the tape is recording and at least one input is tracked, appends a node
//! holding exactly the values its backward rule needs (documented per rule
//! below). `backward` walks the tape in reverse topological order — which is
//! simply reverse insertion order — and accumulates gradients; interior
//! gradients are dropped as soon as they have been consumed, leaf gradients
//! are kept for the caller.
//!
//! There is no broadcasting. Binary elementwise ops require identical shapes;
//! the only implicit expansions are scalar-by-tensor (`scale`, `add_scalar`),
//! per-row scaling (`scale_rows`) and per-column bias (`add_bias`), each a
//! dedicated op with its own rule.

use std::sync::Arc;

use super::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Exp,
    Log,
    Sigmoid,
    LeakyRelu(f64),
    Softplus,
    Sqrt,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    /// dA = G·Bᵀ, dB = Aᵀ·G. Saves both operand buffers.
    Matmul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_val: Arc<Vec<f64>>,
        b_val: Arc<Vec<f64>>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// dB = Sᵀ·G. Saves the sparse operand; gradients for sparse values are
    /// not supported (S is always a fixed graph operator here).
    Spmm {
        s: Arc<SparseMatrix>,
        b: NodeId,
        width: usize,
    },
    /// dA = Gᵀ.
    Transpose { a: NodeId, rows: usize, cols: usize },
    /// Vertical stack; gradient splits at the seam.
    ConcatRows {
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_rows: usize,
        width: usize,
    },
    /// Gradient scatters into the sliced range, zero elsewhere.
    SliceRows {
        a: NodeId,
        start: usize,
        a_len: usize,
        width: usize,
    },
    /// Gradient scatter-adds rows back (indices may repeat).
    GatherRows {
        a: NodeId,
        idx: Arc<Vec<usize>>,
        a_len: usize,
        width: usize,
    },
    /// dA row r = G row segs[r].
    SegmentSum {
        a: NodeId,
        segs: Arc<Vec<usize>>,
        width: usize,
    },
    /// Saves the output y: dx_i = y_i·(g_i − Σ_{j∈seg} g_j·y_j).
    SegmentSoftmax {
        a: NodeId,
        segs: Arc<Vec<usize>>,
        n_segs: usize,
        y: Arc<Vec<f64>>,
    },
    /// Saved buffer depends on the kind: output for exp/sigmoid/sqrt, input
    /// for log/leaky-relu/softplus, nothing for the constant kinds.
    Unary {
        a: NodeId,
        kind: UnaryKind,
        saved: Arc<Vec<f64>>,
    },
    /// add/sub need no saved values; mul/div save both operands.
    Binary {
        kind: BinaryKind,
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_val: Arc<Vec<f64>>,
        b_val: Arc<Vec<f64>>,
    },
    /// out[r,:] = a[r,:]·s[r]. dA[r,:] = G[r,:]·s[r]; dS[r] = Σ_c G[r,c]·a[r,c].
    ScaleRows {
        a: Option<NodeId>,
        s: Option<NodeId>,
        a_val: Arc<Vec<f64>>,
        s_val: Arc<Vec<f64>>,
        width: usize,
    },
    /// out[r,:] = a[r,:] + b. dA = G; dB[c] = Σ_r G[r,c].
    AddBias {
        a: Option<NodeId>,
        b: Option<NodeId>,
        rows: usize,
        width: usize,
    },
    /// dA[r,c] = G[r].
    RowSum { a: NodeId, width: usize },
    /// dA[r,c] = G[r]/width.
    RowMean { a: NodeId, width: usize },
    /// Saves y and per-row norms: dx[r,:] = (g[r,:] − y[r,:]·(y[r,:]·g[r,:]))/norm[r].
    L2NormRows {
        a: NodeId,
        y: Arc<Vec<f64>>,
        norms: Arc<Vec<f64>>,
        width: usize,
    },
    /// dA[i] = G.
    SumAll { a: NodeId, len: usize },
    /// dA[i] = G/len.
    MeanAll { a: NodeId, len: usize },
    /// Same buffer, new shape; gradient reshapes back.
    Reshape { a: NodeId },
}

struct Node {
    op: Op,
}

/// Gradients keyed by tape node, as produced by [`Tape::backward`].
pub struct GradMap {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradMap {
    /// Gradient for a tracked tensor; zeros when the loss does not depend on it.
    pub fn grad(&self, t: &Tensor) -> Result<Tensor> {
        let id = t
            .node()
            .ok_or_else(|| Error::Usage("gradient requested for an untracked tensor".into()))?;
        match self.grads.get(id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_vec(t.shape().to_vec(), g.clone()),
            None => Ok(Tensor::zeros(t.shape().to_vec())),
        }
    }

    /// Raw gradient buffer, `None` when the loss does not depend on the tensor.
    pub fn grad_opt(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node()?;
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

/// Recording tape. Build one per training step; `Tape::disabled()` gives a
/// pass-through for inference forward passes.
pub struct Tape {
    nodes: Vec<Node>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            enabled: true,
        }
    }

    /// A tape that never records; ops only compute forward values.
    pub fn disabled() -> Self {
        Tape {
            nodes: Vec::new(),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.nodes.push(Node { op });
        self.nodes.len() - 1
    }

    /// Register a tensor as a tracked leaf (a future gradient target).
    pub fn var(&mut self, t: &Tensor) -> Tensor {
        let out = t.detached();
        if self.enabled {
            let id = self.push(Op::Leaf);
            out.with_node(id)
        } else {
            out
        }
    }

    fn tracking2(&self, a: &Tensor, b: &Tensor) -> bool {
        self.enabled && (a.node().is_some() || b.node().is_some())
    }

    fn tracking1(&self, a: &Tensor) -> bool {
        self.enabled && a.node().is_some()
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = expect_2d("matmul", a)?;
        let (k2, n) = expect_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = matmul_data(a.data(), b.data(), m, k, n);
        let mut out = Tensor::from_arc(vec![m, n], Arc::new(data));
        if self.tracking2(a, b) {
            let id = self.push(
                Op::Matmul {
                    a: a.node(),
                    b: b.node(),
                    a_val: Arc::clone(a.buffer()),
                    b_val: Arc::clone(b.buffer()),
                    m,
                    k,
                    n,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Sparse × dense. Equals `matmul(densify(s), b)` exactly; gradient flows
    /// to the dense operand only.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, b: &Tensor) -> Result<Tensor> {
        let (k, n) = expect_2d("spmm", b)?;
        if s.cols() != k {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                lhs: vec![s.rows(), s.cols()],
                rhs: b.shape().to_vec(),
            });
        }
        let data = s.mul_dense(b.data(), n);
        let mut out = Tensor::from_arc(vec![s.rows(), n], Arc::new(data));
        if self.tracking1(b) {
            let id = self.push(
                Op::Spmm {
                    s: Arc::clone(s),
                    b: b.node().unwrap(),
                    width: n,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        let (m, n) = expect_2d("transpose", a)?;
        let src = a.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let mut out = Tensor::from_arc(vec![n, m], Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::Transpose {
                    a: a.node().unwrap(),
                    rows: m,
                    cols: n,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    // ----- row structure -----

    pub fn concat_rows(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape().is_empty()
            || b.shape().is_empty()
            || a.shape().len() != b.shape().len()
            || a.shape()[1..] != b.shape()[1..]
        {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut shape = a.shape().to_vec();
        shape[0] += b.shape()[0];
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let mut out = Tensor::from_arc(shape.clone(), Arc::new(data));
        if self.tracking2(a, b) {
            let id = self.push(
                Op::ConcatRows {
                    a: a.node(),
                    b: b.node(),
                    a_rows: a.rows(),
                    width: a.row_width(),
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn slice_rows(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        if a.shape().is_empty() || start + len > a.rows() {
            return Err(Error::Usage(format!(
                "slice_rows [{start}, {}) out of range for {} rows",
                start + len,
                a.rows()
            )));
        }
        let w = a.row_width();
        let mut shape = a.shape().to_vec();
        shape[0] = len;
        let data = a.data()[start * w..(start + len) * w].to_vec();
        let mut out = Tensor::from_arc(shape.clone(), Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::SliceRows {
                    a: a.node().unwrap(),
                    start,
                    a_len: a.len(),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn gather_rows(&mut self, a: &Tensor, idx: &Arc<Vec<usize>>) -> Result<Tensor> {
        if a.shape().is_empty() {
            return Err(Error::Usage("gather_rows on rank-0 tensor".into()));
        }
        let rows = a.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Usage(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let w = a.row_width();
        let src = a.data();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx.iter() {
            data.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        let mut shape = a.shape().to_vec();
        shape[0] = idx.len();
        let mut out = Tensor::from_arc(shape.clone(), Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::GatherRows {
                    a: a.node().unwrap(),
                    idx: Arc::clone(idx),
                    a_len: a.len(),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Sum rows that share a segment id into one output row per segment.
    /// Every segment in `0..n_segs` must be hit by at least one row.
    pub fn segment_sum(
        &mut self,
        a: &Tensor,
        segs: &Arc<Vec<usize>>,
        n_segs: usize,
    ) -> Result<Tensor> {
        check_segments("segment_sum", segs, a.rows(), n_segs)?;
        let w = a.row_width();
        let src = a.data();
        let mut data = vec![0.0; n_segs * w];
        for (r, &s) in segs.iter().enumerate() {
            let dst = &mut data[s * w..(s + 1) * w];
            let row = &src[r * w..(r + 1) * w];
            for (d, &x) in dst.iter_mut().zip(row) {
                *d += x;
            }
        }
        let mut shape = a.shape().to_vec();
        shape[0] = n_segs;
        let mut out = Tensor::from_arc(shape.clone(), Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::SegmentSum {
                    a: a.node().unwrap(),
                    segs: Arc::clone(segs),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Softmax within each segment of a flat tensor (the attention
    /// normalizer). Outputs are positive and sum to 1 per segment.
    pub fn segment_softmax(
        &mut self,
        a: &Tensor,
        segs: &Arc<Vec<usize>>,
        n_segs: usize,
    ) -> Result<Tensor> {
        let n = a.len();
        if a.rows() != n {
            // require width-1 rows: shape [n] or [n, 1]
            return Err(Error::Usage(format!(
                "segment_softmax requires a flat tensor, got shape {:?}",
                a.shape()
            )));
        }
        check_segments("segment_softmax", segs, n, n_segs)?;
        let x = a.data();
        let mut maxes = vec![f64::NEG_INFINITY; n_segs];
        for (i, &s) in segs.iter().enumerate() {
            if x[i] > maxes[s] {
                maxes[s] = x[i];
            }
        }
        let mut sums = vec![0.0; n_segs];
        let mut y = vec![0.0; n];
        for (i, &s) in segs.iter().enumerate() {
            y[i] = (x[i] - maxes[s]).exp();
            sums[s] += y[i];
        }
        for (i, &s) in segs.iter().enumerate() {
            y[i] /= sums[s];
        }
        let y = Arc::new(y);
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::clone(&y));
        if self.tracking1(a) {
            let id = self.push(
                Op::SegmentSoftmax {
                    a: a.node().unwrap(),
                    segs: Arc::clone(segs),
                    n_segs,
                    y,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    // ----- elementwise -----

    fn unary(&mut self, a: &Tensor, kind: UnaryKind) -> Result<Tensor> {
        let x = a.data();
        match kind {
            UnaryKind::Log => {
                if let Some(&bad) = x.iter().find(|&&v| v <= 0.0) {
                    return Err(Error::NumericDomain {
                        op: "log",
                        detail: format!("log of non-positive value {bad}"),
                    });
                }
            }
            UnaryKind::Sqrt => {
                if let Some(&bad) = x.iter().find(|&&v| v < 0.0) {
                    return Err(Error::NumericDomain {
                        op: "sqrt",
                        detail: format!("sqrt of negative value {bad}"),
                    });
                }
            }
            _ => {}
        }
        let data: Vec<f64> = match kind {
            UnaryKind::Exp => x.iter().map(|&v| v.exp()).collect(),
            UnaryKind::Log => x.iter().map(|&v| v.ln()).collect(),
            UnaryKind::Sigmoid => x.iter().map(|&v| sigmoid_scalar(v)).collect(),
            UnaryKind::LeakyRelu(s) => x.iter().map(|&v| if v >= 0.0 { v } else { s * v }).collect(),
            UnaryKind::Softplus => x.iter().map(|&v| softplus_scalar(v)).collect(),
            UnaryKind::Sqrt => x.iter().map(|&v| v.sqrt()).collect(),
            UnaryKind::Scale(c) => x.iter().map(|&v| c * v).collect(),
            UnaryKind::AddScalar(c) => x.iter().map(|&v| c + v).collect(),
        };
        let data = Arc::new(data);
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::clone(&data));
        if self.tracking1(a) {
            let saved = match kind {
                UnaryKind::Exp | UnaryKind::Sigmoid | UnaryKind::Sqrt => data,
                UnaryKind::Log | UnaryKind::LeakyRelu(_) | UnaryKind::Softplus => {
                    Arc::clone(a.buffer())
                }
                UnaryKind::Scale(_) | UnaryKind::AddScalar(_) => Arc::new(Vec::new()),
            };
            let id = self.push(
                Op::Unary {
                    a: a.node().unwrap(),
                    kind,
                    saved,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, UnaryKind::Log)
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: f64) -> Result<Tensor> {
        self.unary(a, UnaryKind::LeakyRelu(slope))
    }

    pub fn softplus(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, UnaryKind::Softplus)
    }

    pub fn sqrt(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, UnaryKind::Sqrt)
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(a, UnaryKind::Scale(c))
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary(a, UnaryKind::AddScalar(c))
    }

    fn binary(&mut self, a: &Tensor, b: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        if kind == BinaryKind::Div {
            if let Some(&bad) = b.data().iter().find(|&&v| v == 0.0) {
                return Err(Error::NumericDomain {
                    op: "div",
                    detail: format!("division by zero ({bad})"),
                });
            }
        }
        let (x, y) = (a.data(), b.data());
        let data: Vec<f64> = match kind {
            BinaryKind::Add => x.iter().zip(y).map(|(&p, &q)| p + q).collect(),
            BinaryKind::Sub => x.iter().zip(y).map(|(&p, &q)| p - q).collect(),
            BinaryKind::Mul => x.iter().zip(y).map(|(&p, &q)| p * q).collect(),
            BinaryKind::Div => x.iter().zip(y).map(|(&p, &q)| p / q).collect(),
        };
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::new(data));
        if self.tracking2(a, b) {
            let id = self.push(
                Op::Binary {
                    kind,
                    a: a.node(),
                    b: b.node(),
                    a_val: Arc::clone(a.buffer()),
                    b_val: Arc::clone(b.buffer()),
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, BinaryKind::Div)
    }

    /// Multiply row r of `a` by `s[r]`.
    pub fn scale_rows(&mut self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        if s.shape().len() != 1 || s.len() != a.rows() {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: a.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let w = a.row_width();
        let (x, sc) = (a.data(), s.data());
        let mut data = vec![0.0; a.len()];
        for r in 0..a.rows() {
            for c in 0..w {
                data[r * w + c] = x[r * w + c] * sc[r];
            }
        }
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::new(data));
        if self.tracking2(a, s) {
            let id = self.push(
                Op::ScaleRows {
                    a: a.node(),
                    s: s.node(),
                    a_val: Arc::clone(a.buffer()),
                    s_val: Arc::clone(s.buffer()),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Add the vector `b` to every row of `a`.
    pub fn add_bias(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let w = a.row_width();
        if b.shape().len() != 1 || b.len() != w {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (x, bias) = (a.data(), b.data());
        let mut data = vec![0.0; a.len()];
        for r in 0..a.rows() {
            for c in 0..w {
                data[r * w + c] = x[r * w + c] + bias[c];
            }
        }
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::new(data));
        if self.tracking2(a, b) {
            let id = self.push(
                Op::AddBias {
                    a: a.node(),
                    b: b.node(),
                    rows: a.rows(),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    // ----- reductions -----

    pub fn row_sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let w = a.row_width();
        let rows = a.rows();
        let x = a.data();
        let data: Vec<f64> = (0..rows).map(|r| x[r * w..(r + 1) * w].iter().sum()).collect();
        let mut out = Tensor::from_arc(vec![rows], Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::RowSum {
                    a: a.node().unwrap(),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn row_mean(&mut self, a: &Tensor) -> Result<Tensor> {
        let w = a.row_width();
        if w == 0 {
            return Err(Error::Usage("row_mean of zero-width rows".into()));
        }
        let rows = a.rows();
        let x = a.data();
        let data: Vec<f64> = (0..rows)
            .map(|r| x[r * w..(r + 1) * w].iter().sum::<f64>() / w as f64)
            .collect();
        let mut out = Tensor::from_arc(vec![rows], Arc::new(data));
        if self.tracking1(a) {
            let id = self.push(
                Op::RowMean {
                    a: a.node().unwrap(),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Normalize every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let w = a.row_width();
        let rows = a.rows();
        let x = a.data();
        let mut norms = vec![0.0; rows];
        for r in 0..rows {
            let sq: f64 = x[r * w..(r + 1) * w].iter().map(|&v| v * v).sum();
            if sq == 0.0 {
                return Err(Error::NumericDomain {
                    op: "l2_normalize_rows",
                    detail: format!("zero-norm row {r}"),
                });
            }
            norms[r] = sq.sqrt();
        }
        let mut y = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..w {
                y[r * w + c] = x[r * w + c] / norms[r];
            }
        }
        let y = Arc::new(y);
        let mut out = Tensor::from_arc(a.shape().to_vec(), Arc::clone(&y));
        if self.tracking1(a) {
            let id = self.push(
                Op::L2NormRows {
                    a: a.node().unwrap(),
                    y,
                    norms: Arc::new(norms),
                    width: w,
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().sum();
        let mut out = Tensor::scalar(total);
        if self.tracking1(a) {
            let id = self.push(
                Op::SumAll {
                    a: a.node().unwrap(),
                    len: a.len(),
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.is_empty() {
            return Err(Error::Usage("mean_all of empty tensor".into()));
        }
        let total: f64 = a.data().iter().sum();
        let mut out = Tensor::scalar(total / a.len() as f64);
        if self.tracking1(a) {
            let id = self.push(
                Op::MeanAll {
                    a: a.node().unwrap(),
                    len: a.len(),
                },
            );
            out = out.with_node(id);
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: &Tensor, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != a.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape,
            });
        }
        let mut out = Tensor::from_arc(shape.clone(), Arc::clone(a.buffer()));
        if self.tracking1(a) {
            let id = self.push(Op::Reshape { a: a.node().unwrap() });
            out = out.with_node(id);
        }
        Ok(out)
    }

    /// Cosine similarity of two equal-shape nonzero tensors, as a scalar
    /// node: dot(a,b)/(‖a‖·‖b‖). Differentiable through the composition.
    pub fn cosine(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "cosine",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let sq = |t: &Tensor| t.data().iter().map(|&v| v * v).sum::<f64>();
        if sq(a) == 0.0 || sq(b) == 0.0 {
            return Err(Error::NumericDomain {
                op: "cosine",
                detail: "cosine of zero vector".into(),
            });
        }
        let ab = self.mul(a, b)?;
        let dot = self.sum_all(&ab)?;
        let aa = self.mul(a, a)?;
        let qa = self.sum_all(&aa)?;
        let bb = self.mul(b, b)?;
        let qb = self.sum_all(&bb)?;
        let prod = self.mul(&qa, &qb)?;
        let denom = self.sqrt(&prod)?;
        self.div(&dot, &denom)
    }

    // ----- backward -----

    /// Reverse accumulation from a tracked scalar loss. Returns leaf
    /// gradients; leaves the loss never touched get zeros on lookup.
    pub fn backward(&self, loss: &Tensor) -> Result<GradMap> {
        let lid = loss
            .node()
            .ok_or_else(|| Error::Usage("backward on an untracked tensor".into()))?;
        if loss.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[lid] = Some(vec![1.0]);
        for id in (0..=lid).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep for the caller
                }
                Op::Matmul {
                    a,
                    b,
                    a_val,
                    b_val,
                    m,
                    k,
                    n,
                } => {
                    let (m, k, n) = (*m, *k, *n);
                    if let Some(aid) = a {
                        let da = acc(&mut grads, *aid, m * k);
                        // dA = G·Bᵀ
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * b_val[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                    if let Some(bid) = b {
                        let db = acc(&mut grads, *bid, k * n);
                        // dB = Aᵀ·G
                        for p in 0..k {
                            for i in 0..m {
                                let a_ip = a_val[i * k + p];
                                if a_ip != 0.0 {
                                    for j in 0..n {
                                        db[p * n + j] += a_ip * g[i * n + j];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Spmm { s, b, width } => {
                    let db = acc(&mut grads, *b, s.cols() * width);
                    s.mul_dense_transposed_into(&g, *width, db);
                }
                Op::Transpose { a, rows, cols } => {
                    let da = acc(&mut grads, *a, rows * cols);
                    for i in 0..*rows {
                        for j in 0..*cols {
                            da[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
                Op::ConcatRows {
                    a,
                    b,
                    a_rows,
                    width,
                } => {
                    let split = a_rows * width;
                    if let Some(aid) = a {
                        let da = acc(&mut grads, *aid, split);
                        for (d, &x) in da.iter_mut().zip(&g[..split]) {
                            *d += x;
                        }
                    }
                    if let Some(bid) = b {
                        let db = acc(&mut grads, *bid, g.len() - split);
                        for (d, &x) in db.iter_mut().zip(&g[split..]) {
                            *d += x;
                        }
                    }
                }
                Op::SliceRows {
                    a,
                    start,
                    a_len,
                    width,
                } => {
                    let da = acc(&mut grads, *a, *a_len);
                    let off = start * width;
                    for (i, &x) in g.iter().enumerate() {
                        da[off + i] += x;
                    }
                }
                Op::GatherRows {
                    a,
                    idx,
                    a_len,
                    width,
                } => {
                    let da = acc(&mut grads, *a, *a_len);
                    for (e, &i) in idx.iter().enumerate() {
                        let grow = &g[e * width..(e + 1) * width];
                        let drow = &mut da[i * width..(i + 1) * width];
                        for (d, &x) in drow.iter_mut().zip(grow) {
                            *d += x;
                        }
                    }
                }
                Op::SegmentSum { a, segs, width } => {
                    let da = acc(&mut grads, *a, segs.len() * width);
                    for (r, &s) in segs.iter().enumerate() {
                        let grow = &g[s * width..(s + 1) * width];
                        let drow = &mut da[r * width..(r + 1) * width];
                        for (d, &x) in drow.iter_mut().zip(grow) {
                            *d += x;
                        }
                    }
                }
                Op::SegmentSoftmax { a, segs, n_segs, y } => {
                    let mut dots = vec![0.0; *n_segs];
                    for (i, &s) in segs.iter().enumerate() {
                        dots[s] += g[i] * y[i];
                    }
                    let da = acc(&mut grads, *a, y.len());
                    for (i, &s) in segs.iter().enumerate() {
                        da[i] += y[i] * (g[i] - dots[s]);
                    }
                }
                Op::Unary { a, kind, saved } => {
                    let da = acc(&mut grads, *a, g.len());
                    match kind {
                        UnaryKind::Exp => {
                            for i in 0..g.len() {
                                da[i] += g[i] * saved[i];
                            }
                        }
                        UnaryKind::Log => {
                            for i in 0..g.len() {
                                da[i] += g[i] / saved[i];
                            }
                        }
                        UnaryKind::Sigmoid => {
                            for i in 0..g.len() {
                                da[i] += g[i] * saved[i] * (1.0 - saved[i]);
                            }
                        }
                        UnaryKind::LeakyRelu(s) => {
                            for i in 0..g.len() {
                                da[i] += g[i] * if saved[i] >= 0.0 { 1.0 } else { *s };
                            }
                        }
                        UnaryKind::Softplus => {
                            for i in 0..g.len() {
                                da[i] += g[i] * sigmoid_scalar(saved[i]);
                            }
                        }
                        UnaryKind::Sqrt => {
                            for i in 0..g.len() {
                                da[i] += g[i] / (2.0 * saved[i]);
                            }
                        }
                        UnaryKind::Scale(c) => {
                            for i in 0..g.len() {
                                da[i] += g[i] * c;
                            }
                        }
                        UnaryKind::AddScalar(_) => {
                            for i in 0..g.len() {
                                da[i] += g[i];
                            }
                        }
                    }
                }
                Op::Binary {
                    kind,
                    a,
                    b,
                    a_val,
                    b_val,
                } => {
                    if let Some(aid) = a {
                        let da = acc(&mut grads, *aid, g.len());
                        match kind {
                            BinaryKind::Add | BinaryKind::Sub => {
                                for i in 0..g.len() {
                                    da[i] += g[i];
                                }
                            }
                            BinaryKind::Mul => {
                                for i in 0..g.len() {
                                    da[i] += g[i] * b_val[i];
                                }
                            }
                            BinaryKind::Div => {
                                for i in 0..g.len() {
                                    da[i] += g[i] / b_val[i];
                                }
                            }
                        }
                    }
                    if let Some(bid) = b {
                        let db = acc(&mut grads, *bid, g.len());
                        match kind {
                            BinaryKind::Add => {
                                for i in 0..g.len() {
                                    db[i] += g[i];
                                }
                            }
                            BinaryKind::Sub => {
                                for i in 0..g.len() {
                                    db[i] -= g[i];
                                }
                            }
                            BinaryKind::Mul => {
                                for i in 0..g.len() {
                                    db[i] += g[i] * a_val[i];
                                }
                            }
                            BinaryKind::Div => {
                                for i in 0..g.len() {
                                    db[i] -= g[i] * a_val[i] / (b_val[i] * b_val[i]);
                                }
                            }
                        }
                    }
                }
                Op::ScaleRows {
                    a,
                    s,
                    a_val,
                    s_val,
                    width,
                } => {
                    let rows = s_val.len();
                    if let Some(aid) = a {
                        let da = acc(&mut grads, *aid, g.len());
                        for r in 0..rows {
                            for c in 0..*width {
                                da[r * width + c] += g[r * width + c] * s_val[r];
                            }
                        }
                    }
                    if let Some(sid) = s {
                        let ds = acc(&mut grads, *sid, rows);
                        for r in 0..rows {
                            let mut dot = 0.0;
                            for c in 0..*width {
                                dot += g[r * width + c] * a_val[r * width + c];
                            }
                            ds[r] += dot;
                        }
                    }
                }
                Op::AddBias { a, b, rows, width } => {
                    if let Some(aid) = a {
                        let da = acc(&mut grads, *aid, g.len());
                        for i in 0..g.len() {
                            da[i] += g[i];
                        }
                    }
                    if let Some(bid) = b {
                        let db = acc(&mut grads, *bid, *width);
                        for r in 0..*rows {
                            for c in 0..*width {
                                db[c] += g[r * width + c];
                            }
                        }
                    }
                }
                Op::RowSum { a, width } => {
                    let da = acc(&mut grads, *a, g.len() * width);
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..*width {
                            da[r * width + c] += gr;
                        }
                    }
                }
                Op::RowMean { a, width } => {
                    let da = acc(&mut grads, *a, g.len() * width);
                    let inv = 1.0 / *width as f64;
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..*width {
                            da[r * width + c] += gr * inv;
                        }
                    }
                }
                Op::L2NormRows { a, y, norms, width } => {
                    let da = acc(&mut grads, *a, y.len());
                    for (r, &norm) in norms.iter().enumerate() {
                        let gr = &g[r * width..(r + 1) * width];
                        let yr = &y[r * width..(r + 1) * width];
                        let dot: f64 = gr.iter().zip(yr).map(|(&p, &q)| p * q).sum();
                        let dr = &mut da[r * width..(r + 1) * width];
                        for c in 0..*width {
                            dr[c] += (gr[c] - yr[c] * dot) / norm;
                        }
                    }
                }
                Op::SumAll { a, len } => {
                    let da = acc(&mut grads, *a, *len);
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::MeanAll { a, len } => {
                    let da = acc(&mut grads, *a, *len);
                    let inv = g[0] / *len as f64;
                    for d in da.iter_mut() {
                        *d += inv;
                    }
                }
                Op::Reshape { a } => {
                    let da = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i];
                    }
                }
            }
        }
        Ok(GradMap { grads })
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

fn expect_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn check_segments(op: &'static str, segs: &[usize], rows: usize, n_segs: usize) -> Result<()> {
    if segs.len() != rows {
        return Err(Error::Usage(format!(
            "{op}: {} segment ids for {rows} rows",
            segs.len()
        )));
    }
    let mut seen = vec![false; n_segs];
    for &s in segs {
        if s >= n_segs {
            return Err(Error::Usage(format!("{op}: segment id {s} >= {n_segs}")));
        }
        seen[s] = true;
    }
    if let Some(empty) = seen.iter().position(|&b| !b) {
        return Err(Error::InvalidGraph(format!("{op}: empty segment {empty}")));
    }
    Ok(())
}

fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &x) in orow.iter_mut().zip(brow) {
                    *o += a_ip * x;
                }
            }
        }
    }
    out
}
