//! Dense tensors, CSR sparse matrices, and the reverse-mode tape.
//!
//! Everything is 64-bit floating point in row-major order. Tensors are
//! immutable value types; the buffer is shared behind an `Arc` so that the
//! tape can save whatever its backward rules need without copying. "Rows"
//! always means axis 0; the row width is the product of the remaining axes,
//! so a 1-D tensor of length n is n rows of width 1.

mod gradcheck;
mod sparse;
mod tape;

pub use gradcheck::{central_difference, check_gradient, GradCheckReport};
pub use sparse::SparseMatrix;
pub use tape::{sigmoid_scalar, softplus_scalar, GradMap, NodeId, Tape};

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Build a tensor from a row-major buffer. The buffer length must equal
    /// the product of the dimensions.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; len]),
            node: None,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Entries drawn i.i.d. from U(lo, hi).
    pub fn uniform<R: Rng>(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    /// Entries drawn i.i.d. from N(0, 1).
    pub fn standard_normal<R: Rng>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| StandardNormal.sample(rng))
            .collect::<Vec<f64>>();
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows (axis 0); 1 for rank-0 tensors.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all axes after the first; 1 for rank-0 and 1-D tensors.
    pub fn row_width(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of len {}", self.data.len());
        self.data[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Copy of this tensor with no tape handle.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Mutable view of the buffer (copy-on-write if shared). Clears any tape
    /// handle: a mutated tensor is a new leaf as far as gradients go.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn buffer(&self) -> &Arc<Vec<f64>> {
        &self.data
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Tensor {
        self.node = Some(node);
        self
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            node: None,
        }
    }
}
