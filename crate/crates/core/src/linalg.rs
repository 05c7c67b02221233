//! Sparse storage for the finite-difference operators and a banded LU
//! factorization with partial pivoting for solving with them.
//!
//! Lexicographic numbering of a tensor grid gives matrices whose bandwidth is
//! the node count of one grid line, so a banded factorization is exact and
//! cheap for the grid sizes used here.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; explicit zeros are kept so the sparsity pattern reflects the
    /// stencil.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(col, value)` pairs of one row, in column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Entry `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scale(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.values[k] *= left[r] * right[self.col_idx[k]];
            }
        }
        out
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        dense
    }

    /// Lower and upper bandwidths of the stored pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for r in 0..self.rows {
            for (c, _) in self.row(r) {
                if c < r {
                    lower = lower.max(r - c);
                } else {
                    upper = upper.max(c - r);
                }
            }
        }
        (lower, upper)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// LU factorization `P A = L U` of a square banded matrix.
///
/// Row `r` of the working array holds columns `r - kl ..= r + kl + ku`, which
/// covers the fill-in produced by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    upper: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        let n = a.rows();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut upper = vec![0.0; n * width];
        for r in 0..n {
            for (c, v) in a.row(r) {
                upper[r * width + c + kl - r] += v;
            }
        }
        let at = |r: usize, c: usize| r * width + c + kl - r;
        let mut multipliers = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = upper[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = upper[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    upper.swap(at(k, j), at(p, j));
                }
            }
            let pivot = upper[at(k, k)];
            for i in k + 1..=last_row {
                let l = upper[at(i, k)] / pivot;
                multipliers[k * kl + (i - k - 1)] = l;
                upper[at(i, k)] = 0.0;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        upper[at(i, j)] -= l * upper[at(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            upper,
            multipliers,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        let (n, kl, ku, width) = (self.n, self.kl, self.ku, self.width);
        if x.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: x.len(),
            });
        }
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.multipliers[k * kl + (i - k - 1)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let row = &self.upper[k * width..(k + 1) * width];
            let mut s = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= row[j + kl - k] * x[j];
            }
            x[k] = s / row[kl];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn dense_oracle(a: &CsrMatrix) -> DMatrix<f64> {
        let d = a.to_dense();
        DMatrix::from_fn(a.rows(), a.cols(), |r, c| d[r][c])
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.transpose().get(1, 0), 3.0);
        assert_eq!(a.bandwidths(), (1, 1));
    }

    #[test]
    fn mul_vec_checks_length() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0)]);
        assert!(matches!(
            a.mul_vec(&[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert_eq!(a.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(BandedLu::factor(&a), Err(Error::Singular(1))));
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 1, 2.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (2, 2, 3.0),
            ],
        );
        let x = BandedLu::factor(&a)
            .unwrap()
            .solve(&[2.0, 2.0, 4.0])
            .unwrap();
        let back = a.mul_vec(&x).unwrap();
        for (u, v) in back.iter().zip([2.0, 2.0, 4.0]) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    fn banded_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
        (3usize..30, 0usize..4, 0usize..4).prop_flat_map(|(n, kl, ku)| {
            (
                Just(n),
                Just(kl),
                Just(ku),
                prop::collection::vec(-1.0f64..1.0, n * n + n),
            )
        })
    }

    proptest! {
        #[test]
        fn banded_solve_matches_dense_oracle((n, kl, ku, raw) in banded_strategy()) {
            let mut triplets = Vec::new();
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    let mut v = raw[r * n + c];
                    if r == c {
                        v += 3.0_f64.copysign(v);
                    }
                    triplets.push((r, c, v));
                }
            }
            let a = CsrMatrix::from_triplets(n, n, &triplets);
            let b = &raw[n * n..];
            let x = BandedLu::factor(&a).unwrap().solve(b).unwrap();
            let oracle = dense_oracle(&a).lu().solve(&DVector::from_column_slice(b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - oracle[i]).abs() <= 1e-9 * (1.0 + oracle[i].abs()));
            }
        }

        #[test]
        fn transpose_is_involutive((n, kl, ku, raw) in banded_strategy()) {
            let mut triplets = Vec::new();
            for r in 0..n {
                for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                    triplets.push((r, c, raw[r * n + c]));
                }
            }
            let a = CsrMatrix::from_triplets(n, n, &triplets);
            prop_assert_eq!(a.transpose().transpose(), a);
        }
    }
}
