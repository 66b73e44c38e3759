//! Inference-mode batch normalization and channel layer normalization.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Param, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[serde(rename = "batchnorm")]
    BatchNorm,
    #[serde(rename = "layernorm")]
    LayerNorm,
}

/// Batch norm with stored running statistics; there is no training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm<T> {
    /// Default statistics: mean 0, variance 1, gamma 1, beta 0.
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{prefix}.gamma"), vec![channels], 1.0),
            beta: Param::filled(format!("{prefix}.beta"), vec![channels], 0.0),
            running_mean: Param::filled(format!("{prefix}.running_mean"), vec![channels], 0.0),
            running_var: Param::filled(format!("{prefix}.running_var"), vec![channels], 1.0),
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return shape_err(format!("batchnorm `{}` parameter lengths disagree", self.gamma.name));
        }
        if let Some(i) = self.running_var.data.iter().position(|v| v.to_f64() <= 0.0) {
            return config_err(format!("batchnorm `{}` has non-positive variance at channel {i}", self.running_var.name));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` so that `y = scale * x + shift`.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels())
            .map(|c| {
                let inv = 1.0 / (self.running_var.data[c].to_f64() + self.eps).sqrt();
                let scale = self.gamma.data[c].to_f64() * inv;
                (scale, self.beta.data[c].to_f64() - self.running_mean.data[c].to_f64() * scale)
            })
            .collect()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate()?;
        let s = x.shape();
        if s.c != self.channels() {
            return shape_err(format!("batchnorm over {} channels applied to {s}", self.channels()));
        }
        let ab = self.affine();
        let plane = s.plane();
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let (a, b) = ab[i % s.c];
            chunk.iter_mut().for_each(|v| *v = T::from_f64(a * v.to_f64() + b));
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn vjp(&self, x: &Tensor<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        self.validate()?;
        let s = x.shape();
        if g.shape() != s || s.c != self.channels() {
            return shape_err(format!("batchnorm vjp: input {s}, upstream {}", g.shape()));
        }
        let plane = s.plane();
        let mut gx = g.clone();
        let mut gg = vec![0.0; s.c];
        let mut gb = vec![0.0; s.c];
        for (i, (gchunk, xchunk)) in gx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
            let c = i % s.c;
            let inv = 1.0 / (self.running_var.data[c].to_f64() + self.eps).sqrt();
            let mean = self.running_mean.data[c].to_f64();
            let gamma = self.gamma.data[c].to_f64();
            for (gv, xv) in gchunk.iter_mut().zip(xchunk) {
                let gf = gv.to_f64();
                gg[c] += gf * (xv.to_f64() - mean) * inv;
                gb[c] += gf;
                *gv = T::from_f64(gf * gamma * inv);
            }
        }
        Ok((gx, gg.into_iter().map(T::from_f64).collect(), gb.into_iter().map(T::from_f64).collect()))
    }
}

/// Layer norm over the channel axis at each spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        LayerNorm {
            gamma: Param::filled(format!("{prefix}.gamma"), vec![channels], 1.0),
            beta: Param::filled(format!("{prefix}.beta"), vec![channels], 0.0),
            eps: LN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.channels() || self.beta.len() != self.channels() {
            return shape_err(format!("layernorm over {} channels applied to {}", self.channels(), x.shape()));
        }
        Ok(())
    }

    /// Normalized values before the affine map, with per-position inverse std.
    fn normalized(&self, x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let s = x.shape();
        let plane = s.plane();
        let mut xhat = vec![0.0; s.numel()];
        let mut inv_std = vec![0.0; s.n * plane];
        let xd = x.data();
        for n in 0..s.n {
            for p in 0..plane {
                let idx = |c: usize| (n * s.c + c) * plane + p;
                let mean = (0..s.c).map(|c| xd[idx(c)].to_f64()).sum::<f64>() / s.c as f64;
                let var = (0..s.c).map(|c| (xd[idx(c)].to_f64() - mean).powi(2)).sum::<f64>() / s.c as f64;
                let inv = 1.0 / (var + self.eps).sqrt();
                inv_std[n * plane + p] = inv;
                for c in 0..s.c {
                    xhat[idx(c)] = (xd[idx(c)].to_f64() - mean) * inv;
                }
            }
        }
        (xhat, inv_std)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let s = x.shape();
        let plane = s.plane();
        let (xhat, _) = self.normalized(x);
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / plane) % s.c;
                T::from_f64(self.gamma.data[c].to_f64() * v + self.beta.data[c].to_f64())
            })
            .collect();
        Ok(Tensor::from_parts(s, data))
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn vjp(&self, x: &Tensor<T>, g: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        self.check(x)?;
        let s = x.shape();
        if g.shape() != s {
            return shape_err(format!("layernorm vjp: input {s}, upstream {}", g.shape()));
        }
        let plane = s.plane();
        let (xhat, inv_std) = self.normalized(x);
        let gd = g.data();
        let mut gx = vec![0.0; s.numel()];
        let mut gg = vec![0.0; s.c];
        let mut gb = vec![0.0; s.c];
        let cf = s.c as f64;
        for n in 0..s.n {
            for p in 0..plane {
                let idx = |c: usize| (n * s.c + c) * plane + p;
                let mut sum_gh = 0.0;
                let mut sum_gh_xh = 0.0;
                for c in 0..s.c {
                    let gv = gd[idx(c)].to_f64();
                    gg[c] += gv * xhat[idx(c)];
                    gb[c] += gv;
                    let gh = gv * self.gamma.data[c].to_f64();
                    sum_gh += gh;
                    sum_gh_xh += gh * xhat[idx(c)];
                }
                let inv = inv_std[n * plane + p];
                for c in 0..s.c {
                    let gh = gd[idx(c)].to_f64() * self.gamma.data[c].to_f64();
                    gx[idx(c)] = inv * (gh - sum_gh / cf - xhat[idx(c)] * sum_gh_xh / cf);
                }
            }
        }
        Ok((
            Tensor::from_parts(s, gx.into_iter().map(T::from_f64).collect()),
            gg.into_iter().map(T::from_f64).collect(),
            gb.into_iter().map(T::from_f64).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn default_batchnorm_scales_by_eps() {
        let bn = BatchNorm::<f64>::new("bn", 2);
        let x = Tensor::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| (c * 4 + y * 2 + x) as f64 - 3.0);
        let y = bn.forward(&x).unwrap();
        let expect = x.scale(1.0 / (1.0f64 + 1e-5).sqrt());
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn batchnorm_rejects_non_positive_variance() {
        let mut bn = BatchNorm::<f64>::new("bn", 3);
        bn.running_var.data[1] = 0.0;
        assert!(bn.forward(&Tensor::zeros(Shape::new(1, 3, 1, 1))).is_err());
    }

    #[test]
    fn layernorm_constant_is_zero() {
        let ln = LayerNorm::<f64>::new("ln", 4);
        let y = ln.forward(&Tensor::full(Shape::new(1, 4, 2, 2), 3.5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_two_channels() {
        let ln = LayerNorm::<f64>::new("ln", 2);
        let x = Tensor::from_fn(Shape::new(1, 2, 1, 3), |_, c, _, _| if c == 0 { 1.0 } else { 3.0 });
        let y = ln.forward(&x).unwrap();
        for p in 0..3 {
            assert!((y.at(0, 0, 0, p) + 1.0).abs() < 1e-6);
            assert!((y.at(0, 1, 0, p) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_moments() {
        let ln = LayerNorm::<f64>::new("ln", 5);
        let x = Tensor::from_fn(Shape::new(2, 5, 3, 3), |n, c, y, x| ((n * 7 + c * 3 + y * 5 + x) % 11) as f64 * 0.3);
        let y = ln.forward(&x).unwrap();
        for n in 0..2 {
            for yy in 0..3 {
                for xx in 0..3 {
                    let vals: Vec<f64> = (0..5).map(|c| y.at(n, c, yy, xx)).collect();
                    let m = vals.iter().sum::<f64>() / 5.0;
                    let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 5.0;
                    assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-5, "{m} {v}");
                }
            }
        }
    }
}
