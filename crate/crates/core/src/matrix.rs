//! Dense row-major matrices.
//!
//! Shapes are validated at the public entry points (graph construction,
//! dataset generation, checkpoint loading); the arithmetic kernels below
//! treat a mismatch as a programmer error and panic via `assert!`.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    /// Builds from row-major values; length must equal rows*cols.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// C = A · B
    pub fn matmul(&self, rhs: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// C = Aᵀ · B without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.rows, rhs.rows, "t_matmul outer dimension");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = rhs.row(i);
            for (p, &a) in a_row.iter().enumerate() {
                let out_row = &mut out.data[p * rhs.cols..(p + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// C = A · Bᵀ without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.cols, rhs.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                let b_row = rhs.row(j);
                let mut acc = F::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc = acc + a * b;
                }
                out.data[i * rhs.rows + j] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<F> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Matrix<F> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: F) -> Matrix<F> {
        self.map(|x| x * s)
    }

    pub fn add(&self, rhs: &Matrix<F>) -> Matrix<F> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape");
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &Matrix<F>) -> Matrix<F> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape");
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// self += s · rhs
    pub fn add_scaled_assign(&mut self, rhs: &Matrix<F>, s: F) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "axpy shape");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + s * b;
        }
    }

    /// Adds `v` to every row; v.len() must equal cols.
    pub fn add_row_broadcast(&self, v: &[F]) -> Matrix<F> {
        assert_eq!(v.len(), self.cols, "broadcast width");
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &b) in out.row_mut(i).iter_mut().zip(v) {
                *x = *x + b;
            }
        }
        out
    }

    /// Sums each column into a vector of length cols.
    pub fn column_sums(&self) -> Vec<F> {
        let mut sums = vec![F::zero(); self.cols];
        for i in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(i)) {
                *s = *s + x;
            }
        }
        sums
    }

    /// Subtracts the column mean from every column.
    pub fn center_columns(&self) -> Matrix<F> {
        let n = F::from_config(self.rows as f64);
        let means: Vec<F> = self.column_sums().into_iter().map(|s| s / n).collect();
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &m) in out.row_mut(i).iter_mut().zip(&means) {
                *x = *x - m;
            }
        }
        out
    }

    /// New matrix whose rows are `self.row(idx)` for each idx.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix<F> {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn frobenius_norm(&self) -> F {
        self.data
            .iter()
            .map(|&x| x * x)
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .map(|x| x.abs())
            .fold(F::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
