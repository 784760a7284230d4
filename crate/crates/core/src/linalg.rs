//! Small dense linear algebra: SVD, pseudoinverse, symmetric eigendecomposition,
//! tridiagonal solves and the Hungarian assignment.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: fmt::Debug> fmt::Debug for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:?} ", self.data[i * self.cols + j])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!("{} entries for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics on ragged input; meant for literals and tests.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        Matrix { rows: r, cols: c, data: rows.concat() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_columns(cols: &[Vec<S>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, |x| x.len());
        Self::from_fn(r, c, |i, j| cols[j][i])
    }

    pub fn diag(values: &[S]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[S]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tmatvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.rows, v.len(), "tmatvec shape mismatch");
        let mut out = vec![S::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: S) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * s).collect() }
    }

    pub fn frobenius(&self) -> S {
        self.data.iter().map(|&a| a * a).sum::<S>().sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, &a| m.max(a.abs()))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| f(a)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| T::lit(a.f64())).collect() }
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Thin SVD: `m = U diag(s) Vᵀ` with `n = min(rows, cols)` singular triplets.
#[derive(Clone, Debug)]
pub struct SvdResult<S> {
    pub singular_values: Vec<S>,
    pub u: Matrix<S>,
    pub v: Matrix<S>,
}

impl<S: Scalar> SvdResult<S> {
    pub fn sigma_min(&self) -> S {
        self.singular_values.last().copied().unwrap_or(S::zero())
    }

    pub fn sigma_max(&self) -> S {
        self.singular_values.first().copied().unwrap_or(S::zero())
    }

    pub fn reconstruct(&self) -> Matrix<S> {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| self.u[(i, j)] * self.singular_values[j]);
        us.matmul(&self.v.transpose())
    }
}

fn sweep_tol<S: Scalar>() -> S {
    S::epsilon() * S::lit(4.0)
}

/// One-sided Jacobi SVD.
pub fn svd<S: Scalar>(m: &Matrix<S>) -> Result<SvdResult<S>> {
    if m.rows == 0 || m.cols == 0 {
        return invalid("svd of an empty matrix");
    }
    if !m.is_finite() {
        return invalid("svd input has non-finite entries");
    }
    if m.rows < m.cols {
        let t = svd(&m.transpose())?;
        return Ok(SvdResult { singular_values: t.singular_values, u: t.v, v: t.u });
    }
    let (r, n) = (m.rows, m.cols);
    let mut a = m.clone();
    let mut v = Matrix::<S>::identity(n);
    let tol = sweep_tol::<S>();

    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (S::zero(), S::zero(), S::zero());
                for i in 0..r {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha == S::zero() || beta == S::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (S::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..r {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<S> = (0..n).map(|j| norm2(&a.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));

    let smax = norms[order[0]];
    let tiny = smax * S::epsilon() * S::lit(r as f64);
    let mut u = Matrix::zeros(r, n);
    let mut vs = Matrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sv.push(s);
        vs.set_col(k, &v.col(j));
        if s > tiny && s > S::zero() {
            let col: Vec<S> = a.col(j).into_iter().map(|x| x / s).collect();
            u.set_col(k, &col);
        } else {
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok(SvdResult { singular_values: sv, u, v: vs })
}

/// Fills the listed columns of `q` with unit vectors orthogonal to all others.
fn complete_orthonormal<S: Scalar>(q: &mut Matrix<S>, missing: &[usize]) {
    let r = q.rows;
    let mut filled: Vec<usize> = (0..q.cols).filter(|j| !missing.contains(j)).collect();
    let mut seed = 0;
    for &k in missing {
        while seed < r {
            let mut e = vec![S::zero(); r];
            e[seed] = S::one();
            seed += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let cj = q.col(j);
                    let p = dot(&e, &cj);
                    for (x, c) in e.iter_mut().zip(&cj) {
                        *x -= p * *c;
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > S::lit(0.5) {
                let e: Vec<S> = e.into_iter().map(|x| x / nrm).collect();
                q.set_col(k, &e);
                filled.push(k);
                break;
            }
        }
    }
}

/// Rank floor relative to the largest singular value.
pub fn rank_tolerance<S: Scalar>() -> S {
    S::lit(1e-10).max(S::epsilon() * S::lit(16.0))
}

/// `(mᵀm)⁻¹mᵀ` via the SVD. Fails with [`Error::DegenerateBasis`] when the
/// smallest singular value is below the relative rank floor.
pub fn pseudoinverse<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>> {
    let f = svd(m)?;
    if m.rows < m.cols {
        return Err(Error::DegenerateBasis { sigma_min: 0.0 });
    }
    let smin = f.sigma_min();
    if smin <= rank_tolerance::<S>() * f.sigma_max() || smin == S::zero() {
        return Err(Error::DegenerateBasis { sigma_min: smin.f64() });
    }
    let n = f.singular_values.len();
    let vs = Matrix::from_fn(m.cols, n, |i, j| f.v[(i, j)] / f.singular_values[j]);
    Ok(vs.matmul(&f.u.transpose()))
}

/// Solves the symmetric tridiagonal system with main diagonal `diag` and
/// off-diagonal `off` (Thomas algorithm, no pivoting).
pub fn solve_tridiagonal<S: Scalar>(diag: &[S], off: &[S], rhs: &[S]) -> Result<Vec<S>> {
    let n = diag.len();
    if n == 0 || rhs.len() != n || off.len() + 1 != n {
        return invalid(format!(
            "tridiagonal lengths: diag {}, off {}, rhs {}",
            n,
            off.len(),
            rhs.len()
        ));
    }
    let mut cp = vec![S::zero(); n];
    let mut dp = vec![S::zero(); n];
    let mut piv = diag[0];
    if piv == S::zero() {
        return Err(Error::DegenerateInput("zero pivot in tridiagonal solve".into()));
    }
    if n > 1 {
        cp[0] = off[0] / piv;
    }
    dp[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - off[i - 1] * cp[i - 1];
        if piv == S::zero() {
            return Err(Error::DegenerateInput("zero pivot in tridiagonal solve".into()));
        }
        if i + 1 < n {
            cp[i] = off[i] / piv;
        }
        dp[i] = (rhs[i] - off[i - 1] * dp[i - 1]) / piv;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= cp[i] * next;
    }
    Ok(x)
}

/// Diagonal of the inverse of a symmetric tridiagonal SPD matrix in O(n),
/// from forward and backward elimination pivots.
pub fn tridiagonal_inverse_diagonal<S: Scalar>(diag: &[S], off: &[S]) -> Result<Vec<S>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return invalid("tridiagonal lengths");
    }
    let mut f = vec![S::zero(); n];
    let mut g = vec![S::zero(); n];
    f[0] = diag[0];
    for i in 1..n {
        f[i] = diag[i] - off[i - 1] * off[i - 1] / f[i - 1];
    }
    g[n - 1] = diag[n - 1];
    for i in (0..n - 1).rev() {
        g[i] = diag[i] - off[i] * off[i] / g[i + 1];
    }
    let out: Vec<S> = (0..n).map(|i| S::one() / (f[i] + g[i] - diag[i])).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateInput("singular tridiagonal matrix".into()));
    }
    Ok(out)
}

/// Eigenvalues (descending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix, by cyclic Jacobi rotations.
pub fn symmetric_eigendecomposition<S: Scalar>(m: &Matrix<S>) -> Result<(Vec<S>, Matrix<S>)> {
    let n = m.rows;
    if n != m.cols || n == 0 {
        return invalid("eigendecomposition needs a nonempty square matrix");
    }
    if !m.is_finite() {
        return invalid("eigendecomposition input has non-finite entries");
    }
    let scale = S::one().max(m.max_abs());
    for i in 0..n {
        for j in i + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > S::lit(1e-10) * scale {
                return invalid("matrix is not symmetric");
            }
        }
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let fro2 = a.frobenius() * a.frobenius();
    for _ in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= S::epsilon() * S::epsilon() * fro2 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vp, vq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vp - s * vq;
                    v[(k, q)] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].partial_cmp(&a[(x, x)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&j| a[(j, j)]).collect();
    let vecs = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok((values, vecs))
}

/// Orthonormalizes the columns of `m` (modified Gram-Schmidt, applied twice).
pub fn orthonormalize_columns<S: Scalar>(m: &Matrix<S>) -> Result<Matrix<S>> {
    let mut q = m.clone();
    for j in 0..m.cols {
        let mut c = q.col(j);
        for _ in 0..2 {
            for k in 0..j {
                let qk = q.col(k);
                let p = dot(&c, &qk);
                for (x, y) in c.iter_mut().zip(&qk) {
                    *x -= p * *y;
                }
            }
        }
        let nrm = norm2(&c);
        if nrm <= S::epsilon() * S::lit(1e3) {
            return Err(Error::DegenerateInput("columns are linearly dependent".into()));
        }
        let c: Vec<S> = c.into_iter().map(|x| x / nrm).collect();
        q.set_col(j, &c);
    }
    Ok(q)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn optimal_assignment<S: Scalar>(cost: &Matrix<S>) -> Result<Vec<usize>> {
    let n = cost.rows;
    if n != cost.cols {
        return invalid(format!("assignment needs a square cost matrix, got {}x{}", cost.rows, cost.cols));
    }
    if !cost.is_finite() {
        return invalid("assignment cost has non-finite entries");
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let inf = S::infinity();
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    Ok(perm)
}
