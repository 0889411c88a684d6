//! Small dense matrices and a column-pivoted Householder least-squares solver.
//!
//! Sizes here are tiny (tens of rows, at most thirteen columns), so everything
//! is a plain row-major `Vec` with no blocking.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Builds a matrix from row slices. Panics if rows have unequal length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, k| self[(i, cols[k])])
    }

    /// Appends a constant column.
    pub fn with_constant_column(&self, value: T) -> Self {
        Self::from_fn(self.rows, self.cols + 1, |i, j| if j < self.cols { self[(i, j)] } else { value })
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn column_norm(&self, j: usize) -> T {
        norm2((0..self.rows).map(|i| self[(i, j)]))
    }

    pub fn max_column_norm(&self) -> T {
        (0..self.cols).map(|j| self.column_norm(j)).fold(T::zero(), T::max)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Euclidean norm with scaling against overflow.
pub fn norm2<T: Scalar>(v: impl IntoIterator<Item = T> + Clone) -> T {
    let scale = v.clone().into_iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss = v.into_iter().fold(T::zero(), |acc, x| {
        let s = x / scale;
        acc + s * s
    });
    scale * ss.sqrt()
}

/// Solution of an unconstrained least-squares problem by pivoted QR.
#[derive(Debug, Clone)]
pub struct LeastSquares<T> {
    pub x: Vec<T>,
    /// Numerical rank detected during factorization.
    pub rank: usize,
    /// Columns judged linearly dependent on earlier pivots; their entries in
    /// `x` are zero (basic solution).
    pub dropped: Vec<usize>,
    /// `|R₁₁| / |R_rr|` over the retained pivots; a cheap lower bound on the
    /// 2-norm condition number.
    pub condition: T,
}

/// Minimizes `‖a·x − b‖₂` with Householder QR and Businger–Golub column
/// pivoting. Rank-deficient columns are left at zero.
pub fn least_squares<T: Scalar>(a: &Matrix<T>, b: &[T]) -> LeastSquares<T> {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(b.len(), m);
    let mut r = a.clone();
    let mut qtb = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut rank = steps;
    let mut r00 = T::zero();
    let rank_tol = T::epsilon() * T::of_usize(m.max(n)) * T::of(10.0);

    for k in 0..steps {
        // Pivot on the largest remaining column norm; ties keep the lower index.
        let mut best = k;
        let mut best_norm = T::zero();
        for j in k..n {
            let nj = norm2((k..m).map(|i| r[(i, j)]));
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        if k == 0 {
            r00 = best_norm;
        }
        if best_norm == T::zero() || best_norm <= rank_tol * r00 {
            rank = k;
            break;
        }
        if best != k {
            for i in 0..m {
                let tmp = r[(i, k)];
                r[(i, k)] = r[(i, best)];
                r[(i, best)] = tmp;
            }
            perm.swap(k, best);
        }

        // Householder vector v with v[0] = x0 + sign(x0)·‖x‖, H = I − 2vvᵀ/vᵀv.
        let alpha = if r[(k, k)] >= T::zero() { -best_norm } else { best_norm };
        let mut v: Vec<T> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vtv = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vtv > T::zero() {
            let two = T::of(2.0);
            for j in k..n {
                let s = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * r[(i, j)]);
                let f = two * s / vtv;
                for i in k..m {
                    r[(i, j)] -= f * v[i - k];
                }
            }
            let s = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * qtb[i]);
            let f = two * s / vtv;
            for i in k..m {
                qtb[i] -= f * v[i - k];
            }
        }
        r[(k, k)] = alpha;
        for i in k + 1..m {
            r[(i, k)] = T::zero();
        }
    }

    let mut z = vec![T::zero(); rank];
    for i in (0..rank).rev() {
        let mut s = qtb[i];
        for j in i + 1..rank {
            s -= r[(i, j)] * z[j];
        }
        z[i] = s / r[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for (i, &zi) in z.iter().enumerate() {
        x[perm[i]] = zi;
    }
    let mut dropped: Vec<usize> = perm[rank..].to_vec();
    dropped.sort_unstable();
    let condition = if rank == 0 { T::infinity() } else { r[(0, 0)].abs() / r[(rank - 1, rank - 1)].abs() };
    LeastSquares { x, rank, dropped, condition }
}
