//! Compressed sparse row storage.

use crate::error::{check_len, Error, Result};

/// A CSR matrix with `f64` values. Column indices within a row are strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, validating the structure.
    pub fn try_new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_len("row_offsets", n_rows + 1, row_offsets.len())?;
        check_len("values", col_indices.len(), values.len())?;
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::Dimension(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::Dimension(format!("row_offsets decrease at row {i}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::Dimension(format!("column index out of range in row {i}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Dimension(format!(
                    "row {i} has unsorted or duplicate columns"
                )));
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build from `(row, col, value)` triplets in any order; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix::try_new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Build from dense rows, dropping exact zeros.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            check_len("dense row", n_cols, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        SparseMatrix::from_triplets(n_rows, n_cols, &triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Iterate `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Rows are visited in increasing order, so each transposed row comes
        // out sorted.
        for (i, j, v) in self.triplets() {
            let slot = next[j];
            col_indices[slot] = i;
            values[slot] = v;
            next[j] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Working-precision product `A x`, summing each row left to right.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matrix-vector operand", self.n_cols, x.len())?;
        Ok((0..self.n_rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).fold(0.0, |acc, (&j, &v)| acc + v * x[j])
            })
            .collect())
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        SparseMatrix {
            values: self.values.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_are_sorted_and_merged() {
        let a = SparseMatrix::from_triplets(
            2,
            3,
            &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 0.5)],
        )
        .unwrap();
        assert_eq!(a.row_offsets(), &[0, 1, 3]);
        assert_eq!(a.col_indices(), &[1, 0, 2]);
        assert_eq!(a.values(), &[2.0, 3.0, 1.5]);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 2.0]).unwrap(), vec![2.0, 6.0]);
    }

    #[test]
    fn invalid_structures_are_rejected() {
        assert!(SparseMatrix::try_new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::try_new(1, 2, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::try_new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::try_new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = SparseMatrix::from_dense(&[
            vec![1.0, 0.0, 2.0],
            vec![0.0, 3.0, 0.0],
            vec![4.0, 0.0, 5.0],
            vec![0.0, 0.0, 6.0],
        ])
        .unwrap();
        let at = a.transpose();
        assert_eq!(at.n_rows(), 3);
        assert_eq!(at.to_dense()[2], vec![2.0, 0.0, 5.0, 6.0]);
        assert_eq!(at.transpose(), a);
    }
}
