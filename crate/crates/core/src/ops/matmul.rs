use crate::error::{shape_err, Result};
use crate::tensor::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged matrix rows");
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v))).collect();
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::from_f64(1.0);
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.at(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data }
    }
}

/// `a * b` with `f64` accumulation.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return shape_err(format!("matmul of {}x{} and {}x{}", a.rows, a.cols, b.rows, b.cols));
    }
    let mut out = Vec::with_capacity(a.rows * b.cols);
    let mut acc = vec![0.0f64; b.cols];
    for r in 0..a.rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (i, av) in a.row(r).iter().enumerate() {
            let av = av.to_f64();
            for (slot, bv) in acc.iter_mut().zip(b.row(i)) {
                *slot += av * bv.to_f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    Ok(Matrix { rows: a.rows, cols: b.cols, data: out })
}

/// Multiply-accumulates of `a * b`.
pub fn matmul_macs(rows: usize, inner: usize, cols: usize) -> u64 {
    (rows * inner * cols) as u64
}

/// Returns `(g * b^T, a^T * g)` for upstream `g` of `a * b`.
pub fn matmul_vjp<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, g: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    if a.cols != b.rows || g.rows != a.rows || g.cols != b.cols {
        return shape_err(format!(
            "matmul vjp: a {}x{}, b {}x{}, upstream {}x{}",
            a.rows, a.cols, b.rows, b.cols, g.rows, g.cols
        ));
    }
    Ok((matmul(g, &b.transpose())?, matmul(&a.transpose(), g)?))
}
