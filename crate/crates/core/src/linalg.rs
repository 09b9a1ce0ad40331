//! Minimal dense linear algebra for the goodness-of-fit and standard-error
//! paths: Householder QR with full Q (orthogonal complements), Cholesky,
//! a cyclic Jacobi symmetric eigensolver and an LU solver. Sizes here top out
//! around a couple of thousand rows, so simple row-major loops are plenty.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = if nrows == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// self * other.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch");
        let mut out = Mat::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (j, &bkj) in b_row.iter().enumerate() {
                    out_row[j] += aik * bkj;
                }
            }
        }
        out
    }

    /// self * v for a column vector v.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.ncols, v.len());
        (0..self.nrows)
            .map(|i| dot(self.row(i), v))
            .collect()
    }

    /// self^T * v.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.nrows, v.len());
        let mut out = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (j, &a) in self.row(i).iter().enumerate() {
                out[j] += a * vi;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full Householder QR of an m x n matrix with m >= n.
///
/// Returns (Q, R) with Q m x m orthogonal and R m x n upper trapezoidal.
pub fn qr_full(a: &Mat) -> (Mat, Mat) {
    let m = a.nrows;
    let n = a.ncols;
    assert!(m >= n, "qr_full expects tall matrices");
    let mut r = a.clone();
    let mut q = Mat::identity(m);
    let mut v = vec![0.0; m];
    for k in 0..n.min(m.saturating_sub(1)) {
        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..m {
            let x = r[(i, k)];
            norm += x * x;
        }
        norm = libm::sqrt(norm);
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
        let mut vnorm2 = 0.0;
        for i in k..m {
            let x = if i == k { r[(i, k)] - alpha } else { r[(i, k)] };
            v[i] = x;
            vnorm2 += x * x;
        }
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // R <- (I - beta v v^T) R
        for j in k..n {
            let mut s = 0.0;
            for i in k..m {
                s += v[i] * r[(i, j)];
            }
            s *= beta;
            for i in k..m {
                r[(i, j)] -= s * v[i];
            }
        }
        // Q <- Q (I - beta v v^T)
        for i in 0..m {
            let mut s = 0.0;
            for l in k..m {
                s += q[(i, l)] * v[l];
            }
            s *= beta;
            for l in k..m {
                q[(i, l)] -= s * v[l];
            }
        }
        // Clean the annihilated entries.
        r[(k, k)] = alpha;
        for i in (k + 1)..m {
            r[(i, k)] = 0.0;
        }
    }
    (q, r)
}

/// Orthonormal basis of the complement of the column space of a full-column-rank
/// m x n matrix (the last m-n columns of the full Q).
///
/// Returns `None` when a diagonal of R collapses relative to the largest one,
/// i.e. the input is numerically rank deficient.
pub fn orth_complement(a: &Mat) -> Option<Mat> {
    let m = a.nrows;
    let n = a.ncols;
    let (q, r) = qr_full(a);
    let mut max_diag = 0.0f64;
    for k in 0..n {
        max_diag = max_diag.max(r[(k, k)].abs());
    }
    for k in 0..n {
        if r[(k, k)].abs() <= 1e-12 * max_diag {
            return None;
        }
    }
    let mut c = Mat::zeros(m, m - n);
    for i in 0..m {
        for j in 0..(m - n) {
            c[(i, j)] = q[(i, n + j)];
        }
    }
    Some(c)
}

/// Cholesky factorization of a symmetric positive definite matrix; returns the
/// lower factor or `None` if a pivot drops below `tol * max(diag)`.
pub fn cholesky(a: &Mat, tol: f64) -> Option<Mat> {
    let n = a.nrows;
    assert_eq!(a.ncols, n);
    let mut max_diag = 0.0f64;
    for i in 0..n {
        max_diag = max_diag.max(a[(i, i)].abs());
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= tol * max_diag {
                    return None;
                }
                l[(i, i)] = libm::sqrt(s);
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Solves L L^T x = b given the lower Cholesky factor.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.nrows;
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching eigenvector columns.
pub fn sym_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.nrows;
    assert_eq!(a.ncols, n);
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if libm::sqrt(off) < 1e-14 * (1.0 + m.max_abs()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    order.sort_by(|&i, &j| evals[j].partial_cmp(&evals[i]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let mut sorted_vecs = Mat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            sorted_vecs[(i, new_j)] = v[(i, old_j)];
        }
    }
    (sorted_vals, sorted_vecs)
}

/// Solves A x = b by LU with partial pivoting; `None` on singular pivots.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.nrows;
    assert_eq!(a.ncols, n);
    assert_eq!(b.len(), n);
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in (k + 1)..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            piv.swap(k, p);
            x.swap(k, p);
        }
        for i in (k + 1)..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let v = lu[(k, j)];
                lu[(i, j)] -= f * v;
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= lu[(i, j)] * x[j];
        }
        x[i] = s / lu[(i, i)];
    }
    Some(x)
}

/// Inverse of a symmetric matrix via its eigendecomposition; eigenvalues with
/// magnitude below `tol * max|lambda|` are treated as zero (pseudo-inverse)
/// and reported through the second return value.
pub fn sym_inverse(a: &Mat, tol: f64) -> (Mat, usize) {
    let n = a.nrows;
    let (vals, vecs) = sym_eigen(a);
    let max_abs = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mut dropped = 0usize;
    let mut inv = Mat::zeros(n, n);
    for k in 0..n {
        if vals[k].abs() <= tol * max_abs {
            dropped += 1;
            continue;
        }
        let scale = 1.0 / vals[k];
        for i in 0..n {
            let vik = vecs[(i, k)];
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                inv[(i, j)] += scale * vik * vecs[(j, k)];
            }
        }
    }
    (inv, dropped)
}
