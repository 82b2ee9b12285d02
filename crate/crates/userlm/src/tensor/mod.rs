//! Dense f64 tensors and the reverse-mode differentiation graph built on them.
//!
//! Everything in this crate that learns — the history encoder, the soft
//! prompts, the seq2seq model — runs on this module. Tensors are plain
//! row-major `Vec<f64>` buffers with a shape; the autodiff graph in
//! [`graph`] records operations on node indices and replays hand-derived
//! vector-Jacobian products in reverse.

pub mod gradcheck;
pub mod graph;

use std::fmt;

/// Errors surfaced by tensor construction and graph operations.
///
/// Every variant carries enough context (shapes, indices) to diagnose the
/// failure from the message alone.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape product does not match buffer length.
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    /// Two operands that must agree in shape do not.
    BinaryShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Matrix multiply inner dimensions disagree or ranks are not 2.
    MatmulShape { lhs: Vec<usize>, rhs: Vec<usize> },
    /// Operation requires a specific rank.
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    /// A non-finite value (NaN or infinity) reached an op that forbids it.
    NonFinite { op: &'static str, index: usize, value: f64 },
    /// Softmax row where every key is masked out.
    AllMaskedRow { row: usize },
    /// Index out of bounds for an op that selects rows/columns/entries.
    IndexOutOfBounds { op: &'static str, index: usize, bound: usize },
    /// Backward called twice, or on a graph with no scalar root.
    GraphState { msg: String },
    /// Embedding lookup id outside the table.
    BadTokenId { id: usize, vocab: usize },
    /// Dimension parameter invalid (zero, or failing a divisibility rule).
    BadDimension { msg: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected:?}, got {got:?}")
            }
            TensorError::BinaryShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: operand shapes differ: {lhs:?} vs {rhs:?}")
            }
            TensorError::MatmulShape { lhs, rhs } => {
                write!(f, "matmul: incompatible shapes {lhs:?} x {rhs:?}")
            }
            TensorError::RankMismatch { op, expected, got } => {
                write!(f, "{op}: expected rank {expected}, got shape {got:?}")
            }
            TensorError::NonFinite { op, index, value } => {
                write!(f, "{op}: non-finite value {value} at flat index {index}")
            }
            TensorError::AllMaskedRow { row } => {
                write!(f, "masked softmax: row {row} has no unmasked key")
            }
            TensorError::IndexOutOfBounds { op, index, bound } => {
                write!(f, "{op}: index {index} out of bounds (size {bound})")
            }
            TensorError::GraphState { msg } => write!(f, "graph state: {msg}"),
            TensorError::BadTokenId { id, vocab } => {
                write!(f, "token id {id} outside vocabulary of size {vocab}")
            }
            TensorError::BadDimension { msg } => write!(f, "bad dimension: {msg}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from a shape and a buffer; the buffer length must equal the
    /// shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: shape.clone(),
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    /// 2-D convenience constructor from nested slices (row major).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![r, c],
                    got: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Scalar value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::RankMismatch {
                op: "item",
                expected: 0,
                got: self.shape.clone(),
            })
        }
    }

    /// Entry of a 2-D tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        if self.rank() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(TensorError::RankMismatch {
                op: "dims2",
                expected: 2,
                got: self.shape.clone(),
            })
        }
    }

    /// First flat index holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, &v)| (i, v))
    }
}

/// Boolean mask over attention scores: `true` means "blocked" (the query may
/// not look at that key). Row-major `[queries, keys]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMat {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl BoolMat {
    /// All-visible mask (nothing blocked).
    pub fn all_visible(rows: usize, cols: usize) -> Self {
        BoolMat { rows, cols, blocked: vec![false; rows * cols] }
    }

    /// Causal mask for self-attention: query i may see keys 0..=i.
    pub fn causal(n: usize) -> Self {
        let mut blocked = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                blocked[i * n + j] = true;
            }
        }
        BoolMat { rows: n, cols: n, blocked }
    }

    pub fn from_fn(rows: usize, cols: usize, mut is_blocked: impl FnMut(usize, usize) -> bool) -> Self {
        let mut blocked = vec![false; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                blocked[i * cols + j] = is_blocked(i, j);
            }
        }
        BoolMat { rows, cols, blocked }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.cols + j]
    }

    /// Whether every row has at least one visible key.
    pub fn first_fully_blocked_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| (0..self.cols).all(|j| self.is_blocked(i, j)))
    }
}
