use crate::error::{shape_err, Result};
use crate::ops::matmul::Matrix;
use crate::tensor::Scalar;

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax over the last axis (each row).
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut row = vec![0.0; x.cols];
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        for (slot, v) in row.iter_mut().zip(x.row(r)) {
            *slot = v.to_f64();
        }
        softmax_in_place(&mut row);
        data.extend(row.iter().map(|&v| T::from_f64(v)));
    }
    Matrix { rows: x.rows, cols: x.cols, data }
}

/// Row-wise `y * (g - <g, y>)` given the softmax output `y`.
pub fn softmax_rows_vjp<T: Scalar>(y: &Matrix<T>, g: &Matrix<T>) -> Result<Matrix<T>> {
    if y.rows != g.rows || y.cols != g.cols {
        return shape_err(format!("softmax vjp: output {}x{}, upstream {}x{}", y.rows, y.cols, g.rows, g.cols));
    }
    let mut data = Vec::with_capacity(y.data.len());
    for r in 0..y.rows {
        let (yr, gr) = (y.row(r), g.row(r));
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        data.extend(yr.iter().zip(gr).map(|(a, b)| T::from_f64(a.to_f64() * (b.to_f64() - inner))));
    }
    Ok(Matrix { rows: y.rows, cols: y.cols, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        softmax_in_place(&mut r);
        r
    }

    #[test]
    fn known_values() {
        assert_eq!(sm(&[0.0, 0.0]), vec![0.5, 0.5]);
        for v in sm(&[1000.0, 1000.0, 1000.0]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let r = sm(&[0.0, 3f64.ln()]);
        assert!((r[0] - 0.25).abs() < 1e-15 && (r[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        let m = Matrix::<f32>::from_rows(&[&[1.0, -2.0, 30.0], &[-50.0, 0.0, 0.5]]).unwrap();
        let y = softmax_rows(&m);
        for r in 0..2 {
            let s: f64 = y.row(r).iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let x = [0.0, 3f64.ln()];
        let g = Matrix::<f64>::from_rows(&[&[0.7, -1.3]]).unwrap();
        let y = softmax_rows(&Matrix::<f64>::from_rows(&[&x]).unwrap());
        let analytic = softmax_rows_vjp(&y, &g).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let loss = |d: f64| {
                let mut p = x;
                p[i] += d;
                let s = sm(&p);
                0.7 * s[0] - 1.3 * s[1]
            };
            let fd = (loss(h) - loss(-h)) / (2.0 * h);
            let a = analytic.data[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-6, "{a} vs {fd}");
        }
    }
}
