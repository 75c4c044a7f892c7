//! Small dense matrix helpers.
//!
//! The problem sizes here are desk scale (d up to a few dozen), so the
//! crate carries its own row-major matrix with the three operations it
//! needs: matrix-vector products, symmetric eigenvalues (cyclic Jacobi),
//! and a pivoted Gaussian-elimination solve.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(nrows * ncols);
        for row in &rows {
            if row.len() != ncols {
                return Err(Error::DimensionMismatch {
                    expected: ncols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: nrows,
            cols: ncols,
            data,
        })
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

    /// `y = A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x.iter())
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `C = A B`.
    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations,
    /// returned in ascending order.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<T>> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: self.cols,
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let tol = T::of(1e-14);
        for _sweep in 0..100 {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= T::of(1e-300) {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::of(2.0) * apq);
                    let t = {
                        let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                        sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                    };
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
        Ok(eig)
    }

    /// Largest eigenvalue of a symmetric matrix.
    pub fn symmetric_max_eigenvalue(&self) -> Result<T> {
        let eig = self.symmetric_eigenvalues()?;
        eig.last()
            .copied()
            .ok_or_else(|| Error::InvalidArgument("empty matrix".into()))
    }

    /// Solve `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: self.cols,
            });
        }
        if b.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: b.len(),
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let mut pivot = col;
            for r in (col + 1)..n {
                if a[(r, col)].abs() > a[(pivot, col)].abs() {
                    pivot = r;
                }
            }
            if a[(pivot, col)].abs() < T::of(1e-300) {
                return Err(Error::InvalidArgument("singular matrix".into()));
            }
            if pivot != col {
                for j in 0..n {
                    let tmp = a[(col, j)];
                    a[(col, j)] = a[(pivot, j)];
                    a[(pivot, j)] = tmp;
                }
                rhs.swap(col, pivot);
            }
            for r in (col + 1)..n {
                let f = a[(r, col)] / a[(col, col)];
                if f == T::zero() {
                    continue;
                }
                for j in col..n {
                    let v = a[(col, j)];
                    a[(r, j)] -= f * v;
                }
                let v = rhs[col];
                rhs[r] -= f * v;
            }
        }
        let mut x = vec![T::zero(); n];
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for j in (row + 1)..n {
                acc -= a[(row, j)] * x[j];
            }
            x[row] = acc / a[(row, row)];
        }
        Ok(x)
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Orthonormalize the rows of a square Gaussian sample (modified
/// Gram-Schmidt with one re-orthogonalization pass). Used to build
/// random rotations for synthetic problem generation.
pub fn orthonormalize_rows<T: Scalar>(m: &mut Matrix<T>) {
    let n = m.rows();
    for i in 0..n {
        for _pass in 0..2 {
            for j in 0..i {
                let mut proj = T::zero();
                for k in 0..n {
                    proj += m[(i, k)] * m[(j, k)];
                }
                for k in 0..n {
                    let v = m[(j, k)];
                    m[(i, k)] -= proj * v;
                }
            }
        }
        let mut norm = T::zero();
        for k in 0..n {
            norm += m[(i, k)] * m[(i, k)];
        }
        let norm = norm.sqrt();
        let inv = if norm > T::of(1e-300) {
            T::one() / norm
        } else {
            T::zero()
        };
        for k in 0..n {
            m[(i, k)] *= inv;
        }
    }
}

/// `Qᵀ diag(λ) Q` for row-orthonormal `q`: a symmetric matrix with the
/// prescribed spectrum.
pub fn symmetric_from_spectrum<T: Scalar>(q: &Matrix<T>, spectrum: &[T]) -> Matrix<T> {
    let n = q.rows();
    debug_assert_eq!(spectrum.len(), n);
    let mut scaled = q.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] = spectrum[i] * scaled[(i, j)];
        }
    }
    let qt = q.transpose();
    let raw = qt.matmul(&scaled);
    // Symmetrize to scrub rounding asymmetry.
    let mut sym = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = (raw[(i, j)] + raw[(j, i)]) * T::of(0.5);
        }
    }
    sym
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let m = Matrix::<f64>::identity(3);
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_recovers_diagonal_spectrum() {
        let mut m = Matrix::<f64>::zeros(3, 3);
        m[(0, 0)] = 2.0;
        m[(1, 1)] = 0.5;
        m[(2, 2)] = 1.25;
        let eig = m.symmetric_eigenvalues().unwrap();
        assert!((eig[0] - 0.5).abs() < 1e-12);
        assert!((eig[1] - 1.25).abs() < 1e-12);
        assert!((eig[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_on_rotated_spectrum() {
        // 2x2 rotation of diag(3, 1) by 30 degrees.
        let c = (std::f64::consts::PI / 6.0).cos();
        let s = (std::f64::consts::PI / 6.0).sin();
        let q = Matrix::from_rows(vec![vec![c, s], vec![-s, c]]).unwrap();
        let a = symmetric_from_spectrum(&q, &[3.0, 1.0]);
        let eig = a.symmetric_eigenvalues().unwrap();
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::<f64>::from_rows(vec![vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = a.solve(&[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Matrix::<f64>::from_rows(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(a.solve(&[1.0, 2.0]).is_err());
    }
}
