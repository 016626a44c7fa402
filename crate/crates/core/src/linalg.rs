//! Small dense and vector kernels.
//!
//! Everything here works on plain slices so the estimators can hand
//! buffers around without an array library in the way.

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi = *xi * alpha;
    }
}

pub fn all_finite<T: Scalar>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: rows.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0) });
        }
        Ok(Self { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.n, "matvec dimension");
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * (T::one() + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    /// Lower Cholesky factor, or `None` when the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.n;
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Eigenvalues come back in ascending order; column `k` of the returned
    /// matrix is the eigenvector for eigenvalue `k`.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Self) {
        let n = self.n;
        let mut a = self.clone();
        let mut v = Self::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off + a[(i, j)] * a[(i, j)];
                }
            }
            let scale: T = a.data.iter().map(|&x| x * x).sum::<T>().sqrt();
            if off.sqrt() <= eps * eps * scale.max(T::min_positive_value()) || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (c::<T>(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let cs = T::one() / (t * t + T::one()).sqrt();
                    let sn = t * cs;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = cs * akp - sn * akq;
                        a[(k, q)] = sn * akp + cs * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = cs * apk - sn * aqk;
                        a[(q, k)] = sn * apk + cs * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = cs * vkp - sn * vkq;
                        v[(k, q)] = sn * vkp + cs * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Self::from_fn(n, |r, k| v[(r, order[k])]);
        (values, vectors)
    }

    /// Column `k` as an owned vector.
    pub fn column(&self, k: usize) -> Vec<T> {
        (0..self.n).map(|r| self[(r, k)]).collect()
    }

    /// Assemble a dense matrix by applying an operator to each unit vector.
    pub fn from_operator(n: usize, mut apply: impl FnMut(&[T]) -> Result<Vec<T>>) -> Result<Self> {
        let mut m = Self::zeros(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = apply(&e)?;
            e[j] = T::zero();
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        Ok(m)
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Extreme eigenvalue estimates of a symmetric operator from `steps`
/// Lanczos iterations started at `start`.
///
/// Returns `(smallest, largest)` Ritz values. Full reorthogonalization is
/// used; the operator dimension in this crate is at most a few hundred.
pub fn lanczos_extremes<T: Scalar>(
    dim: usize,
    start: &[T],
    steps: usize,
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<(T, T)> {
    let steps = steps.min(dim).max(1);
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<T> = Vec::with_capacity(steps);
    let mut q = start.to_vec();
    let nq = norm(&q);
    if nq == T::zero() {
        return Err(Error::Contract("lanczos start vector is zero".into()));
    }
    scale(T::one() / nq, &mut q);
    for _ in 0..steps {
        let mut w = apply(&q)?;
        let a = dot(&q, &w);
        alphas.push(a);
        basis.push(q.clone());
        for b in &basis {
            let proj = dot(b, &w);
            axpy(-proj, b, &mut w);
        }
        let beta = norm(&w);
        if beta <= T::epsilon() * (T::one() + a.abs()) || basis.len() == steps {
            break;
        }
        betas.push(beta);
        scale(T::one() / beta, &mut w);
        q = w;
    }
    let m = alphas.len();
    let tri = DenseMatrix::from_fn(m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            T::zero()
        }
    });
    let (vals, _) = tri.symmetric_eigen();
    Ok((vals[0], vals[m - 1]))
}

/// Spectral-norm estimate of a symmetric operator by power iteration.
pub fn power_iteration_norm<T: Scalar>(
    start: &[T],
    iters: usize,
    mut apply: impl FnMut(&[T]) -> Result<Vec<T>>,
) -> Result<T> {
    let mut v = start.to_vec();
    let nv = norm(&v);
    if nv == T::zero() {
        return Ok(T::zero());
    }
    scale(T::one() / nv, &mut v);
    let mut est = T::zero();
    for _ in 0..iters {
        let w = apply(&v)?;
        let nw = norm(&w);
        est = nw;
        if nw == T::zero() {
            break;
        }
        v = w;
        scale(T::one() / nw, &mut v);
    }
    Ok(est)
}
