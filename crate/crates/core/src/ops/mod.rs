//! Forward primitives and their vector-Jacobian products.

pub mod activation;
pub mod conv;
pub mod matmul;
pub mod norm;
pub mod softmax;

pub use activation::Activation;
pub use conv::{conv2d, conv2d_raw, conv2d_vjp, ConvGrads, ConvSpec};
pub use matmul::{matmul, matmul_vjp, Matrix};
pub use norm::{BatchNorm, LayerNorm, NormKind};
pub use softmax::{softmax_in_place, softmax_rows, softmax_rows_vjp};

use crate::tensor::{Scalar, Shape, Tensor};

/// Mean over each channel plane, producing `N x C x 1 x 1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let data = x
        .data()
        .chunks(plane)
        .map(|c| T::from_f64(c.iter().map(|v| v.to_f64()).sum::<f64>() / plane as f64))
        .collect();
    Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_vjp<T: Scalar>(input: Shape, g: &Tensor<T>) -> Tensor<T> {
    let plane = input.plane();
    let mut data = Vec::with_capacity(input.numel());
    for v in g.data() {
        let share = T::from_f64(v.to_f64() / plane as f64);
        data.extend(std::iter::repeat_n(share, plane));
    }
    Tensor::from_parts(input, data)
}
