//! Small dense linear-algebra kernels used by the ridge and reference solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                let (ri, rj) = (l.row(i), l.row(j));
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Squared ratio of the largest to smallest pivot, a cheap lower bound on
    /// the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let diag = self.lower.diag();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        (max / min).powi(2)
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        let mut z = b.to_owned();
        for i in 0..n {
            let row = self.lower.row(i);
            let mut s = z[i];
            for k in 0..i {
                s -= row[k] * z[k];
            }
            z[i] = s / row[i];
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn solve_upper(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        let mut x = z.to_owned();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lower[[k, i]] * x[k];
            }
            x[i] = s / self.lower[[i, i]];
        }
        x
    }

    /// Solves `A x = b` with two triangular solves.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let z = self.solve_lower(b);
        self.solve_upper(z.view())
    }
}

pub fn norm2(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Rows per partial sum of the streaming products. Fixed so results do not
/// depend on the thread count.
pub(crate) const ROW_CHUNK: usize = 2048;

fn row_chunk_sum<F>(a: ArrayView2<'_, f64>, per_row: F) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>, usize) -> f64 + Sync,
{
    let n = a.nrows();
    let partials: Vec<Array1<f64>> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Array1::zeros(a.ncols());
            for i in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n) {
                let row = a.row(i);
                let s = per_row(row, i);
                if s != 0.0 {
                    acc.scaled_add(s, &row);
                }
            }
            acc
        })
        .collect();
    partials.into_iter().fold(Array1::zeros(a.ncols()), |acc, p| acc + p)
}

/// `a^T v`. Row-major matrices are streamed row by row.
pub fn t_dot(a: ArrayView2<'_, f64>, v: ArrayView1<'_, f64>) -> Array1<f64> {
    assert_eq!(a.nrows(), v.len(), "t_dot: {} rows, vector of {}", a.nrows(), v.len());
    if !a.is_standard_layout() {
        return a.t().dot(&v);
    }
    row_chunk_sum(a, |_, i| v[i])
}

/// `a^T a v`, in a single pass over the rows when `a` is row-major.
pub fn gram_dot(a: ArrayView2<'_, f64>, v: ArrayView1<'_, f64>) -> Array1<f64> {
    assert_eq!(
        a.ncols(),
        v.len(),
        "gram_dot: {} columns, vector of {}",
        a.ncols(),
        v.len()
    );
    if !a.is_standard_layout() {
        return a.t().dot(&a.dot(&v));
    }
    row_chunk_sum(a, |row, _| row.dot(&v))
}
