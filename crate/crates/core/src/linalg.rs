//! Small dense solves for the scale-power systems (at most 7x7).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// LU factorization with partial pivoting, stored in place.
#[derive(Debug, Clone)]
pub(crate) struct Lu<T> {
    lu: Vec<Vec<T>>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub(crate) fn factor(mut a: Vec<Vec<T>>) -> Result<Self> {
        let n = a.len();
        if a.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("matrix must be square"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            if a[pivot][col] == T::zero() || !a[pivot][col].is_finite() {
                return Err(Error::InvalidRule("singular scale-power system".into()));
            }
            a.swap(col, pivot);
            perm.swap(col, pivot);
            for row in col + 1..n {
                let factor = a[row][col] / a[col][col];
                a[row][col] = factor;
                for k in col + 1..n {
                    let v = a[col][k];
                    a[row][k] = a[row][k] - factor * v;
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub(crate) fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.len();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] = x[i] - self.lu[i][k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] = x[i] - self.lu[i][k] * x[k];
            }
            x[i] = x[i] / self.lu[i][i];
        }
        x
    }

    /// Explicit inverse, column by column.
    pub(crate) fn inverse(&self) -> Vec<Vec<T>> {
        let n = self.lu.len();
        let mut inv = vec![vec![T::zero(); n]; n];
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[i][j] = col[i];
            }
        }
        inv
    }
}

pub(crate) fn norm_1<T: Real>(a: &[Vec<T>]) -> T {
    let n = a.first().map_or(0, Vec::len);
    (0..n)
        .map(|j| a.iter().fold(T::zero(), |s, row| s + row[j].abs()))
        .fold(T::zero(), T::max)
}

pub(crate) fn mat_vec<T: Real>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter()
        .map(|row| row.iter().zip(x).fold(T::zero(), |s, (&r, &v)| s + r * v))
        .collect()
}

/// Solves `a x = b`, applies one step of iterative refinement, and returns the
/// solution with the 1-norm condition number of `a`.
pub(crate) fn solve_with_condition<T: Real>(a: Vec<Vec<T>>, b: &[T]) -> Result<(Vec<T>, T)> {
    let lu = Lu::factor(a.clone())?;
    let mut x = lu.solve(b);
    let ax = mat_vec(&a, &x);
    let resid: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let dx = lu.solve(&resid);
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi = *xi + di;
    }
    let cond = norm_1(&a) * norm_1(&lu.inverse());
    Ok((x, cond))
}
