use crate::error::{Error, Result};

use super::DenseMatrix;

/// Coordinate-list sparse matrix kept in canonical `(row, col)` order.
///
/// Row offsets are cached so row slices and `spmm` do not need a search;
/// the triplet list itself is the canonical content.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    row_offsets: Vec<usize>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::from_canonical(rows, cols, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_canonical(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Builds a matrix from arbitrary triplets. Duplicates are summed and
    /// explicit zeros dropped. The result does not depend on input order.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut raw: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &raw {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!(
                    "sparse entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite sparse entry at ({r}, {c})")));
            }
        }
        // values participate in the sort so duplicate sums are order independent
        raw.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (r, c, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != 0.0);
        Ok(Self::from_canonical(rows, cols, entries))
    }

    /// `entries` must already be sorted, unique and non-zero.
    pub(crate) fn from_canonical(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        debug_assert!(entries.iter().all(|e| e.2 != 0.0 && e.0 < rows && e.1 < cols));
        let mut row_offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_offsets[r + 1] += 1;
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            rows,
            cols,
            entries,
            row_offsets,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let entries = (0..m.rows())
            .flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v != 0.0).then_some((i, j, v))
            })
            .collect();
        Self::from_canonical(m.rows(), m.cols(), entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[self.row_offsets[i]..self.row_offsets[i + 1]]
            .iter()
            .map(|&(_, c, v)| (c, v))
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.entries[self.row_offsets[i]..self.row_offsets[i + 1]];
        row.binary_search_by_key(&j, |e| e.1)
            .map_or(0.0, |k| row[k].2)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            out[(r, c)] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        entries.sort_by_key(|e| (e.0, e.1));
        Self::from_canonical(self.cols, self.rows, entries)
    }

    /// Applies `f` to every stored value, dropping results that become zero.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|&(r, c, v)| (r, c, f(r, c, v)))
            .filter(|e| e.2 != 0.0)
            .collect();
        Self::from_canonical(self.rows, self.cols, entries)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid("sparse add shape mismatch"));
        }
        Self::from_triplets(
            self.rows,
            self.cols,
            self.entries.iter().chain(&other.entries).copied(),
        )
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// First coordinate `(i, j)` with `|a_ij - a_ji| > tol`, if any.
    pub fn asymmetry(&self, tol: f64) -> Option<(usize, usize)> {
        if !self.is_square() {
            return Some((0, 0));
        }
        self.entries
            .iter()
            .find(|&&(r, c, v)| (v - self.get(c, r)).abs() > tol)
            .map(|&(r, c, _)| (r, c))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry(tol).is_none()
    }
}

/// Sparse-dense product `s * m`. Each output row is accumulated in stored
/// column order, so results are bitwise reproducible.
pub fn spmm(s: &SparseMatrix, m: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != m.rows() {
        return Err(Error::invalid(format!(
            "spmm dimension mismatch: {}x{} * {}x{}",
            s.rows,
            s.cols,
            m.rows(),
            m.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(s.rows, m.cols());
    for i in 0..s.rows {
        let out_row = out.row_mut(i);
        for (k, v) in s.row(i) {
            for (o, &x) in out_row.iter_mut().zip(m.row(k)) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}
