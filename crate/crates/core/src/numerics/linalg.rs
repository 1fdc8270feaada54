//! Small dense row-major matrices and a Cholesky factorization.
//!
//! Dimensions in this crate stay well below a few thousand, so everything here
//! is plain `Vec<f64>` storage with straightforward loops.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense vector of reals.
pub type Vector = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vector {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Adds `v` to every diagonal entry.
    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let avg = 0.5 * (self[(r, c)] + self[(c, r)]);
                out[(r, c)] = avg;
                out[(c, r)] = avg;
            }
        }
        out
    }

    /// Extracts the sub-block with the given row and column indices.
    pub fn select(&self, row_idx: &[usize], col_idx: &[usize]) -> Result<Matrix> {
        for &i in row_idx {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    dim: self.rows,
                });
            }
        }
        for &j in col_idx {
            if j >= self.cols {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    dim: self.cols,
                });
            }
        }
        let mut out = Matrix::zeros(row_idx.len(), col_idx.len());
        for (r, &i) in row_idx.iter().enumerate() {
            for (c, &j) in col_idx.iter().enumerate() {
                out[(r, c)] = self[(i, j)];
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        let n = m.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = &l.data[j * n..j * n + j];
            let pivot = m[(j, j)] - dot(lj, lj);
            if !pivot.is_finite() || pivot <= 0.0 {
                return Err(Error::NotPositiveDefinite { row: j, pivot });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let s = m[(i, j)] - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    pub fn into_lower(self) -> Matrix {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vector> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / self.l[(i, i)];
        }
        Ok(y)
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Result<Vector> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[(i, i)];
            let xi = x[i];
            for (k, xk) in x.iter_mut().enumerate().take(i) {
                *xk -= self.l[(i, k)] * xi;
            }
        }
        Ok(x)
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vector> {
        self.solve_upper(&self.solve_lower(b)?)
    }

    /// Solves `M X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.rows(),
            });
        }
        let bt = b.transpose();
        let mut xt = Matrix::zeros(b.cols(), b.rows());
        for c in 0..b.cols() {
            let x = self.solve(bt.row(c))?;
            xt.data[c * b.rows()..(c + 1) * b.rows()].copy_from_slice(&x);
        }
        Ok(xt.transpose())
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L v`.
    pub fn mul_lower(&self, v: &[f64]) -> Vector {
        let n = self.dim();
        (0..n)
            .map(|i| dot(&self.l.row(i)[..=i], &v[..=i]))
            .collect()
    }
}

/// Returns the lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    Cholesky::new(m).map(Cholesky::into_lower)
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn solve_spd(m: &Matrix, b: &[f64]) -> Result<Vector> {
    if m.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: b.len(),
        });
    }
    Cholesky::new(m)?.solve(b)
}

/// Symmetric eigendecomposition `M = U diag(λ) Uᵀ`, eigenvalues ascending.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vector, Matrix)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: m.cols(),
        });
    }
    let n = m.rows();
    let dm = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    let eig = nalgebra::SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, c)] = eig.eigenvectors[(r, i)];
        }
    }
    Ok((values, vectors))
}

/// Principal square root of a symmetric positive-semidefinite matrix.
/// Tiny negative eigenvalues from rounding are clipped to zero.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix> {
    let (values, u) = symmetric_eigen(&m.symmetrized())?;
    let roots: Vector = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scaled = u.matmul(&Matrix::from_diagonal(&roots))?;
    Ok(scaled.matmul(&u.transpose())?.symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_hand_example() {
        let l = cholesky(&m(&[&[4.0, 2.0], &[2.0, 3.0]])).unwrap();
        let expected = m(&[&[2.0, 0.0], &[1.0, 2f64.sqrt()]]);
        assert!(l.sub(&expected).unwrap().max_abs() < 1e-15);
        let back = l.matmul(&l.transpose()).unwrap();
        assert!(back.sub(&m(&[&[4.0, 2.0], &[2.0, 3.0]])).unwrap().max_abs() <= 1e-10 * 4.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(matches!(
            cholesky(&m(&[&[1.0, 2.0], &[2.0, 1.0]])),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn solve_spd_examples() {
        assert_eq!(
            solve_spd(&Matrix::identity(2), &[1.0, 2.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let x = solve_spd(&m(&[&[2.0, 0.0], &[0.0, 4.0]]), &[2.0, 4.0]).unwrap();
        assert!(norm_inf(&sub(&x, &[1.0, 1.0])) < 1e-15);
        // inverse of [[4,2],[2,3]] is [[3,-2],[-2,4]]/8
        let a = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let x = solve_spd(&a, &[1.0, 0.0]).unwrap();
        assert!((x[0] - 3.0 / 8.0).abs() < 1e-15 && (x[1] + 2.0 / 8.0).abs() < 1e-15);
        let r = sub(&a.matvec(&x).unwrap(), &[1.0, 0.0]);
        assert!(norm_inf(&r) <= 1e-9);
    }

    #[test]
    fn solve_spd_dimension_mismatch() {
        assert!(matches!(
            solve_spd(&Matrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_matrix_matches_columns() {
        let a = m(&[&[4.0, 2.0, 0.5], &[2.0, 3.0, 0.1], &[0.5, 0.1, 2.0]]);
        let b = m(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, -1.0]]);
        let x = Cholesky::new(&a).unwrap().solve_matrix(&b).unwrap();
        assert!(a.matmul(&x).unwrap().sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn sqrtm_squares_back() {
        let a = m(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let r = sqrtm_psd(&a).unwrap();
        assert!(r.matmul(&r).unwrap().sub(&a).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn from_rows_rejects_ragged() {
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
