use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Gelu,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// `silu(v) = v * sigmoid(v)`; `gelu(v) = v * Phi(v)` with the exact normal CDF.
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Silu => v * sigmoid(v),
            Activation::Gelu => 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)),
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + v * pdf
            }
        }
    }

    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    pub fn vjp<T: Scalar>(self, x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != g.shape() {
            return shape_err(format!("activation vjp: input {}, upstream {}", x.shape(), g.shape()));
        }
        x.zip_map(g, |xv, gv| gv * self.derivative(xv))
    }
}
