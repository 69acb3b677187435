//! Compressed-sparse-row matrices.
//!
//! Column indices are strictly increasing within each row and all stored
//! values are finite. Binary relations store an explicit 1.0 per edge.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::InvalidGraph(format!(
                    "triplet ({r}, {c}) out of range for {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NumericDomain {
                    op: "from_triplets",
                    detail: format!("non-finite value at ({r}, {c})"),
                });
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = col_idx.len();
        }
        // rows with no entries keep ptr 0 from init; make monotone
        for r in 0..rows {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Binary matrix from (row, col) pairs; duplicates collapse to one 1.0.
    pub fn binary_from_pairs(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut uniq: Vec<(usize, usize)> = pairs.into_iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        SparseMatrix::from_triplets(rows, cols, uniq.into_iter().map(|(r, c)| (r, c, 1.0)))
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// (column indices, values) of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Structural invariants: monotone row offsets, strictly increasing
    /// column indices per row, in-range indices, finite values.
    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return Err(Error::InvalidGraph("bad row_ptr length".into()));
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return Err(Error::InvalidGraph("nnz mismatch".into()));
        }
        for r in 0..self.rows {
            if self.row_ptr[r + 1] < self.row_ptr[r] {
                return Err(Error::InvalidGraph("row_ptr not monotone".into()));
            }
            let (cols, vals) = self.row(r);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidGraph(format!(
                        "columns not strictly increasing in row {r}"
                    )));
                }
            }
            for (&c, &v) in cols.iter().zip(vals) {
                if c >= self.cols {
                    return Err(Error::InvalidGraph(format!("column {c} out of range")));
                }
                if !v.is_finite() {
                    return Err(Error::NumericDomain {
                        op: "validate",
                        detail: format!("non-finite value in row {r}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.iter() {
            out[r * self.cols + c] = v;
        }
        out
    }

    /// Dense product self * b where b is row-major rows=self.cols x width.
    pub fn mul_dense(&self, b: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols * width);
        let mut out = vec![0.0; self.rows * width];
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let orow = &mut out[r * width..(r + 1) * width];
            for (&c, &v) in cols.iter().zip(vals) {
                let brow = &b[c * width..(c + 1) * width];
                for (o, &x) in orow.iter_mut().zip(brow) {
                    *o += v * x;
                }
            }
        }
        out
    }

    /// Accumulate transpose(self) * g into out (used by the spmm backward rule).
    pub(crate) fn mul_dense_transposed_into(&self, g: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows * width);
        debug_assert_eq!(out.len(), self.cols * width);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let grow = &g[r * width..(r + 1) * width];
            for (&c, &v) in cols.iter().zip(vals) {
                let orow = &mut out[c * width..(c + 1) * width];
                for (o, &x) in orow.iter_mut().zip(grow) {
                    *o += v * x;
                }
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts;
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_idx[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-sparse product self * other.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "sparse matmul",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let mut row_ptr = vec![0usize; self.rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&k, &v) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &ov) in ocols.iter().zip(ovals) {
                    if acc[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    acc[c] += v * ov;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
            }
            row_ptr[r + 1] = col_idx.len();
            touched.clear();
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Per-row sum of values.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// Number of stored entries per column.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.cols];
        for &c in &self.col_idx {
            out[c] += 1;
        }
        out
    }

    /// New matrix with row r scaled by d[r].
    pub fn scale_rows(&self, d: &[f64]) -> SparseMatrix {
        debug_assert_eq!(d.len(), self.rows);
        let mut m = self.clone();
        for r in 0..self.rows {
            let (s, e) = (m.row_ptr[r], m.row_ptr[r + 1]);
            for v in &mut m.values[s..e] {
                *v *= d[r];
            }
        }
        m
    }

    /// New matrix with column c scaled by d[c].
    pub fn scale_cols(&self, d: &[f64]) -> SparseMatrix {
        debug_assert_eq!(d.len(), self.cols);
        let mut m = self.clone();
        for (i, &c) in m.col_idx.iter().enumerate() {
            m.values[i] *= d[c];
        }
        m
    }
}
