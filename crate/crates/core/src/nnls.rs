//! Lawson–Hanson active-set solver for `min ‖Ax − b‖₂` subject to `x ≥ 0`.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{least_squares, norm2, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnlsError {
    #[error("problem has no rows or no columns")]
    Empty,
    #[error("right-hand side has length {got}, matrix has {rows} rows")]
    DimensionMismatch { rows: usize, got: usize },
    #[error("non-finite value in the design matrix or right-hand side")]
    NonFiniteInput,
}

#[derive(Debug, Clone)]
pub struct NnlsProblem<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    /// Gradient tolerance for the optimality test.
    pub tol: T,
    /// Cap on outer (variable-entering) iterations.
    pub max_iter: usize,
}

impl<T: Scalar> NnlsProblem<T> {
    /// Problem with default tolerance `1e-10 · max column norm` and an
    /// iteration cap of `3p`.
    pub fn new(a: Matrix<T>, b: Vec<T>) -> Result<Self, NnlsError> {
        if a.rows() == 0 || a.cols() == 0 {
            return Err(NnlsError::Empty);
        }
        if b.len() != a.rows() {
            return Err(NnlsError::DimensionMismatch { rows: a.rows(), got: b.len() });
        }
        if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(NnlsError::NonFiniteInput);
        }
        let tol = T::of(1e-10) * a.max_column_norm();
        let max_iter = 3 * a.cols();
        Ok(Self { a, b, tol, max_iter })
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    pub residual_norm: T,
    /// `Aᵀ(Ax − b)` at `x`.
    pub gradient: Vec<T>,
    /// Indices with `x_j = 0`.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm after each outer iteration, starting from `x = 0`.
    pub residual_trace: Vec<T>,
    /// Condition estimate of the final passive-set submatrix.
    pub condition: T,
    /// Passive columns dropped as linearly dependent in the final subproblem.
    pub rank_deficient: Vec<usize>,
    pub tol: T,
}

impl<T: Scalar> NnlsSolution<T> {
    /// First index violating the optimality conditions at `tol`, if any:
    /// `g_j ≥ −tol` where `x_j = 0` and `|g_j| ≤ tol` where `x_j > 0`.
    pub fn kkt_violation(&self, tol: T) -> Option<usize> {
        self.x.iter().zip(&self.gradient).position(|(&x, &g)| {
            if x < T::zero() {
                true
            } else if x == T::zero() {
                g < -tol
            } else {
                g.abs() > tol
            }
        })
    }

    pub fn satisfies_kkt(&self, tol: T) -> bool {
        self.kkt_violation(tol).is_none()
    }
}

/// Solves the problem with the Lawson–Hanson active-set method.
///
/// All variables start at zero. Each outer iteration promotes the zero-set
/// variable with the largest negative gradient (lowest index on ties), solves
/// the unconstrained subproblem on the passive set by pivoted QR, and walks
/// back along the segment toward it whenever a passive coefficient would turn
/// non-positive. Iteration exhaustion returns `converged = false` with a
/// feasible `x`.
pub fn nnls_solve<T: Scalar>(problem: &NnlsProblem<T>) -> Result<NnlsSolution<T>, NnlsError> {
    let a = &problem.a;
    let b = &problem.b;
    let (m, p) = (a.rows(), a.cols());
    if m == 0 || p == 0 {
        return Err(NnlsError::Empty);
    }
    if b.len() != m {
        return Err(NnlsError::DimensionMismatch { rows: m, got: b.len() });
    }
    if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(NnlsError::NonFiniteInput);
    }
    let tol = problem.tol;

    let mut x = vec![T::zero(); p];
    let mut passive = vec![false; p];
    // Variables whose entry was rejected because the subproblem could not give
    // them a positive value; cleared whenever x changes.
    let mut blocked = vec![false; p];
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = Vec::new();
    let mut condition = T::one();
    let mut rank_deficient = Vec::new();

    loop {
        let residual = residual_of(a, &x, b);
        trace.push(norm2(residual.iter().copied()));
        debug_assert!(
            trace.len() < 2 || {
                let (prev, cur) = (trace[trace.len() - 2], trace[trace.len() - 1]);
                cur <= prev + T::of(1e-9) * prev.max(T::one())
            }
        );
        // w = Aᵀ(b − Ax) is the negative gradient.
        let w = a.tr_mul_vec(&residual);

        let mut entering = None;
        let mut best = tol;
        for j in 0..p {
            if !passive[j] && !blocked[j] && w[j] > best {
                best = w[j];
                entering = Some(j);
            }
        }
        let Some(t) = entering else {
            converged = true;
            break;
        };
        if iterations == problem.max_iter {
            break;
        }
        iterations += 1;
        passive[t] = true;

        let mut first = true;
        loop {
            let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let ls = least_squares(&a.select_columns(&cols), b);
            let mut z = vec![T::zero(); p];
            for (k, &j) in cols.iter().enumerate() {
                z[j] = ls.x[k];
            }
            if first && z[t] <= T::zero() {
                passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;
            blocked.iter_mut().for_each(|f| *f = false);

            if cols.iter().all(|&j| z[j] > T::zero()) {
                x = z;
                break;
            }
            // Largest feasible step from x toward z.
            let mut alpha = T::infinity();
            let mut hit = cols[0];
            for &j in &cols {
                if z[j] <= T::zero() {
                    let step = x[j] / (x[j] - z[j]);
                    if step < alpha {
                        alpha = step;
                        hit = j;
                    }
                }
            }
            for &j in &cols {
                x[j] = x[j] + alpha * (z[j] - x[j]);
            }
            x[hit] = T::zero();
            for &j in &cols {
                if x[j] <= T::zero() {
                    x[j] = T::zero();
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&f| f) {
                break;
            }
        }
    }

    let cols: Vec<usize> = (0..p).filter(|&j| x[j] > T::zero()).collect();
    if !cols.is_empty() {
        let ls = least_squares(&a.select_columns(&cols), b);
        condition = ls.condition;
        rank_deficient = ls.dropped.iter().map(|&k| cols[k]).collect();
    }

    let residual = residual_of(a, &x, b);
    let residual_norm = norm2(residual.iter().copied());
    let gradient = a.tr_mul_vec(&residual).into_iter().map(|v| -v).collect();
    let active_set = (0..p).filter(|&j| x[j] == T::zero()).collect();
    Ok(NnlsSolution {
        x,
        residual_norm,
        gradient,
        active_set,
        iterations,
        converged,
        residual_trace: trace,
        condition,
        rank_deficient,
        tol,
    })
}

fn residual_of<T: Scalar>(a: &Matrix<T>, x: &[T], b: &[T]) -> Vec<T> {
    a.mul_vec(x).into_iter().zip(b).map(|(ax, &bi)| bi - ax).collect()
}
