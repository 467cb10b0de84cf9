//! Sparse and dense linear-algebra helpers.
//!
//! Assembly produces [`CsrMatrix`] values; factorizations are delegated to
//! `faer` (supernodal sparse Cholesky, dense LLT and symmetric eigensolvers).

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, Vec::new())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `|A| |x|`, entrywise absolute values.
    pub fn abs_apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| (v * x[j]).abs()).sum()
            })
            .collect()
    }

    /// `b - A x` with each row summed in twice the working precision, so the
    /// result is accurate even when it is far below `eps |A| |x|`.
    pub fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(b.len(), self.nrows);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let (mut s, mut c) = (b[i], 0.0);
                for (&j, &v) in cols.iter().zip(vals) {
                    let p = -v * x[j];
                    let pe = (-v).mul_add(x[j], -p);
                    let t = s + p;
                    let z = t - s;
                    c += (s - (t - z)) + (p - z) + pe;
                    s = t;
                }
                s + c
            })
            .collect()
    }

    /// `y^T A x`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(y.len(), self.nrows);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let ax: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
                y[i] * ax
            })
            .sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    /// Returns `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let trips = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        CsrMatrix::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn scaled(&self, alpha: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Principal submatrix on the given index list (kept in the given order).
    pub fn principal_submatrix(&self, idx: &[usize]) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut map = vec![usize::MAX; self.ncols];
        for (local, &g) in idx.iter().enumerate() {
            map[g] = local;
        }
        let mut trips = Vec::new();
        for (li, &gi) in idx.iter().enumerate() {
            let (cols, vals) = self.row(gi);
            for (&gj, &v) in cols.iter().zip(vals) {
                let lj = map[gj];
                if lj != usize::MAX {
                    trips.push((li, lj, v));
                }
            }
        }
        CsrMatrix::from_triplets(idx.len(), idx.len(), trips)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn from_dense(m: MatRef<'_, f64>, drop_tol: f64) -> CsrMatrix {
        let mut trips = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    trips.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), trips)
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| Error::Numerical(format!("sparse conversion failed: {e:?}")))
    }
}

/// Sparse `L L^T` factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(
                "cholesky of a non-square matrix".into(),
            ));
        }
        let n = a.nrows();
        let llt = a.to_faer()?.sp_cholesky(Side::Lower).map_err(|e| {
            Error::Numerical(format!("sparse cholesky failed (matrix not SPD?): {e:?}"))
        })?;
        Ok(SparseCholesky { llt, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solve with iterative refinement against the original matrix.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], steps: usize) -> Vec<f64> {
        let mut x = self.solve(b);
        for _ in 0..steps {
            let r = a.residual(b, &x);
            let dx = self.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        }
        x
    }

    /// Iterative refinement with accurately summed residuals until
    /// `|b - A x| <= tol |b|`, or until the residual stops decreasing at the
    /// rounding floor `8 eps | |A| |x| |` of a double precision `x`. Fails when
    /// neither level is reached.
    pub fn solve_checked(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let bn = norm2(b);
        let mut x = self.solve(b);
        let mut r = a.residual(b, &x);
        let mut rn = norm2(&r);
        for _ in 0..6 {
            if rn <= tol * bn {
                break;
            }
            let dx = self.solve(&r);
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + di).collect();
            let rc = a.residual(b, &cand);
            let rcn = norm2(&rc);
            if rcn >= rn {
                break;
            }
            (x, r, rn) = (cand, rc, rcn);
        }
        let floor = 8.0 * f64::EPSILON * norm2(&a.abs_apply(&x));
        if rn > (tol * bn).max(floor) {
            return Err(Error::Numerical(format!(
                "solve residual {rn:e} exceeds {tol:e} * |b| = {:e} and the rounding floor {floor:e}",
                tol * bn
            )));
        }
        Ok(x)
    }
}

/// Dense lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Numerical(format!("dense cholesky failed: {e:?}")))?;
    Ok(llt.L().to_owned())
}

pub fn solve_lower_in_place(l: MatRef<'_, f64>, rhs: MatMut<'_, f64>) {
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, rhs, Par::Seq);
}

/// Solves `L^T x = rhs` in place.
pub fn solve_lower_transpose_in_place(l: MatRef<'_, f64>, rhs: MatMut<'_, f64>) {
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.transpose(), rhs, Par::Seq);
}

/// Solves `L L^T x = b` for a vector right-hand side.
pub fn cholesky_solve(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    solve_lower_in_place(l, rhs.as_mut());
    solve_lower_transpose_in_place(l, rhs.as_mut());
    (0..n).map(|i| rhs[(i, 0)]).collect()
}

/// Ascending eigenvalues and `b`-orthonormal eigenvectors of `a x = lambda b x`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

/// Dense symmetric-definite generalized eigenproblem via Cholesky reduction of `b`.
///
/// Only the first `count` eigenvectors are formed; all eigenvalues are returned.
pub fn generalized_symmetric_eigen(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
    count: usize,
) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    assert_eq!((n, n), (a.ncols(), b.nrows()));
    let l = cholesky_lower(b)?;
    // C = L^{-1} A L^{-T}
    let mut x = a.to_owned();
    solve_lower_in_place(l.as_ref(), x.as_mut());
    let mut c = x.transpose().to_owned();
    solve_lower_in_place(l.as_ref(), c.as_mut());
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let values: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let count = count.min(n);
    let mut vectors = evd.U().subcols(0, count).to_owned();
    solve_lower_transpose_in_place(l.as_ref(), vectors.as_mut());
    Ok(GeneralizedEigen { values, vectors })
}

/// Eigenvalues only of the symmetric-definite pencil `(a, b)`.
pub fn generalized_symmetric_eigenvalues(
    a: MatRef<'_, f64>,
    b: MatRef<'_, f64>,
) -> Result<Vec<f64>> {
    let n = a.nrows();
    let l = cholesky_lower(b)?;
    let mut x = a.to_owned();
    solve_lower_in_place(l.as_ref(), x.as_mut());
    let mut c = x.transpose().to_owned();
    solve_lower_in_place(l.as_ref(), c.as_mut());
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    c.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed: {e:?}")))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dense_quad_form(m: MatRef<'_, f64>, x: &[f64]) -> f64 {
    dense_bilinear(m, x, x)
}

pub fn dense_bilinear(m: MatRef<'_, f64>, x: &[f64], y: &[f64]) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for j in 0..n {
        if x[j] == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * y[i];
        }
        s += col * x[j];
    }
    s
}

pub fn dense_matvec(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for i in 0..m.nrows() {
            y[i] += m[(i, j)] * xj;
        }
    }
    y
}

pub fn frobenius(m: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}
