use ndarray::{Array2, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form. Symmetric matrices store both
/// triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(Error::ShapeMismatch(format!(
                "entry ({r}, {c}) outside {dim}x{dim} matrix"
            )));
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut prev = None;
        for (r, c, v) in triplets {
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            prev = Some((r, c));
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        let m = Self {
            dim,
            indptr,
            indices,
            values,
        };
        Ok(m.prune_zeros())
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            indptr: (0..=dim).collect(),
            indices: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    fn prune_zeros(self) -> Self {
        if self.values.iter().all(|&v| v != 0.0) {
            return self;
        }
        let mut out = Self {
            dim: self.dim,
            indptr: vec![0; self.dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for r in 0..self.dim {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if v != 0.0 {
                    out.indices.push(c);
                    out.values.push(v);
                }
            }
            out.indptr[r + 1] = out.indices.len();
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// All stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.triplets()
            .all(|(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    /// Symmetric normalization `D^{-1/2} A D^{-1/2}` with `D_ii = sum_j A_ij`.
    /// Sparsity pattern is preserved.
    pub fn normalize(&self) -> Result<Self> {
        let degrees = self.row_sums();
        if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::ZeroDegree(i));
        }
        let mut out = self.clone();
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] /= (degrees[r] * degrees[self.indices[k]]).sqrt();
            }
        }
        Ok(out)
    }

    /// Restriction to the given node list (in order): entry `(a, b)` of the
    /// result is entry `(nodes[a], nodes[b])` of `self`.
    pub fn submatrix(&self, nodes: &[usize]) -> Self {
        let mut position = vec![usize::MAX; self.dim];
        for (k, &n) in nodes.iter().enumerate() {
            position[n] = k;
        }
        let mut out = Self {
            dim: nodes.len(),
            indptr: vec![0; nodes.len() + 1],
            indices: Vec::new(),
            values: Vec::new(),
        };
        for (k, &n) in nodes.iter().enumerate() {
            let (cols, vals) = self.row(n);
            let mut row: Vec<(usize, f64)> = cols
                .iter()
                .zip(vals)
                .filter(|(&c, _)| position[c] != usize::MAX)
                .map(|(&c, &v)| (position[c], v))
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                out.indices.push(c);
                out.values.push(v);
            }
            out.indptr[k + 1] = out.indices.len();
        }
        out
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "spmm: matrix dim {} vs {} rows",
                self.dim,
                x.nrows()
            )));
        }
        let mut out = Array2::zeros(x.raw_dim());
        for (r, row) in out.axis_iter_mut(Axis(0)).enumerate() {
            self.accumulate_row(r, x.view(), None, row);
        }
        Ok(out)
    }

    /// `out += sum_k A[r,k] x[k]`, skipping `k` where `active[k]` is false.
    pub(crate) fn accumulate_row(
        &self,
        r: usize,
        x: ArrayView2<f64>,
        active: Option<&[bool]>,
        mut out: ArrayViewMut1<f64>,
    ) {
        let (cols, vals) = self.row(r);
        let out = out.as_slice_mut().expect("contiguous output row");
        for (&c, &w) in cols.iter().zip(vals) {
            if active.is_some_and(|a| !a[c]) {
                continue;
            }
            let src = x.row(c);
            let src = src.as_slice().expect("contiguous input row");
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 0.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), 3.0);
        assert!(SparseMatrix::from_triplets(2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn normalize_all_ones() {
        let a = SparseMatrix::from_triplets(
            2,
            vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
        )
        .unwrap();
        let n = a.normalize().unwrap().to_dense();
        assert_eq!(n, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn normalize_identity_fixed_point() {
        let i = SparseMatrix::identity(4);
        assert_eq!(i.normalize().unwrap(), i);
    }

    #[test]
    fn normalize_zero_row_errors() {
        let a = SparseMatrix::from_triplets(2, vec![(0, 0, 1.0)]).unwrap();
        assert!(matches!(a.normalize(), Err(Error::ZeroDegree(1))));
    }

    #[test]
    fn spmm_identity_and_shape() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(SparseMatrix::identity(3).spmm(&x).unwrap(), x);
        assert!(SparseMatrix::identity(2).spmm(&x).is_err());
    }

    #[test]
    fn diagonal_only_row_copies_input() {
        let a = SparseMatrix::from_triplets(
            3,
            vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0), (2, 2, 1.0)],
        )
        .unwrap();
        let x = array![[1.0, 0.0], [0.0, 1.0], [7.0, -3.0]];
        let y = a.spmm(&x).unwrap();
        assert_eq!(y.row(2), x.row(2));
        assert_eq!(y.row(0), array![1.0, 2.0]);
    }

    #[test]
    fn submatrix_keeps_order() {
        let a = SparseMatrix::from_triplets(3, vec![(0, 2, 5.0), (2, 0, 5.0), (1, 1, 1.0)]).unwrap();
        let s = a.submatrix(&[2, 0]);
        assert_eq!(s.to_dense(), array![[0.0, 5.0], [5.0, 0.0]]);
    }
}
