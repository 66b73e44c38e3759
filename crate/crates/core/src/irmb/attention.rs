//! Multi-head self-attention restricted to non-overlapping windows.
//!
//! Queries and keys may have a different channel count than values: each of
//! the `heads` attention matrices is built from a `C_qk / heads` slice of
//! q/k and applied to a `C_v / heads` slice of v. Padded window slots are
//! excluded from both the query and key sets.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::irmb::window::WindowLayout;
use crate::ops::{matmul, matmul_vjp, softmax_rows, softmax_rows_vjp, Matrix};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnSpec {
    pub heads: usize,
    pub window: usize,
    /// Logit multiplier, `1 / sqrt(C_qk / heads)` by convention.
    pub scale: f64,
}

impl AttnSpec {
    pub fn new(heads: usize, window: usize, qk_channels: usize) -> Self {
        AttnSpec { heads, window, scale: 1.0 / ((qk_channels / heads.max(1)).max(1) as f64).sqrt() }
    }

    pub fn check(&self, q: Shape, k: Shape, v: Shape) -> Result<WindowLayout> {
        if self.heads == 0 {
            return config_err("attention needs at least one head");
        }
        if q != k {
            return shape_err(format!("attention q {q} and k {k} differ"));
        }
        if (v.n, v.h, v.w) != (q.n, q.h, q.w) {
            return shape_err(format!("attention v {v} incompatible with q {q}"));
        }
        if !q.c.is_multiple_of(self.heads) || !v.c.is_multiple_of(self.heads) {
            return config_err(format!(
                "heads {} must divide q/k channels {} and v channels {}",
                self.heads, q.c, v.c
            ));
        }
        WindowLayout::new(q.h, q.w, self.window)
    }

    /// MACs of `QK^T` and `AV` for the given shapes (per batch item).
    pub fn macs(&self, qk_channels: usize, v_channels: usize, layout: &WindowLayout) -> u64 {
        layout.attention_pairs() * (qk_channels + v_channels) as u64
    }

    /// Scale, exponent and normalization: three flops per logit per head.
    pub fn softmax_flops(&self, layout: &WindowLayout) -> u64 {
        3 * layout.attention_pairs() * self.heads as u64
    }
}

fn gather<T: Scalar>(x: &Tensor<T>, n: usize, c0: usize, cs: usize, pixels: &[(usize, usize)]) -> Matrix<T> {
    let mut data = Vec::with_capacity(pixels.len() * cs);
    for &(y, xx) in pixels {
        for c in c0..c0 + cs {
            data.push(x.at(n, c, y, xx));
        }
    }
    Matrix { rows: pixels.len(), cols: cs, data }
}

fn scatter_add<T: Scalar>(dst: &mut Tensor<T>, m: &Matrix<T>, n: usize, c0: usize, pixels: &[(usize, usize)]) {
    for (r, &(y, xx)) in pixels.iter().enumerate() {
        for j in 0..m.cols {
            let cur = dst.at(n, c0 + j, y, xx).to_f64();
            dst.set(n, c0 + j, y, xx, T::from_f64(cur + m.at(r, j).to_f64()));
        }
    }
}

fn logits<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, scale: f64) -> Result<Matrix<T>> {
    let mut l = matmul(q, &k.transpose())?;
    l.data.iter_mut().for_each(|v| *v = T::from_f64(v.to_f64() * scale));
    Ok(l)
}

/// Attention matrices of every `(batch, window, head)`, in that nesting order.
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, spec: &AttnSpec) -> Result<Vec<Matrix<T>>> {
    let layout = spec.check(q.shape(), k.shape(), q.shape())?;
    let dq = q.shape().c / spec.heads;
    let mut out = Vec::new();
    for n in 0..q.shape().n {
        for win in 0..layout.num_windows() {
            let px = layout.valid_pixels(win);
            for h in 0..spec.heads {
                let qm = gather(q, n, h * dq, dq, &px);
                let km = gather(k, n, h * dq, dq, &px);
                out.push(softmax_rows(&logits(&qm, &km, spec.scale)?));
            }
        }
    }
    Ok(out)
}

pub fn window_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, spec: &AttnSpec) -> Result<Tensor<T>> {
    let (qs, vs) = (q.shape(), v.shape());
    let layout = spec.check(qs, k.shape(), vs)?;
    let (dq, dv) = (qs.c / spec.heads, vs.c / spec.heads);
    let mut out = Tensor::zeros(vs);
    for n in 0..qs.n {
        for win in 0..layout.num_windows() {
            let px = layout.valid_pixels(win);
            for h in 0..spec.heads {
                let qm = gather(q, n, h * dq, dq, &px);
                let km = gather(k, n, h * dq, dq, &px);
                let a = softmax_rows(&logits(&qm, &km, spec.scale)?);
                let o = matmul(&a, &gather(v, n, h * dv, dv, &px))?;
                scatter_add(&mut out, &o, n, h * dv, &px);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AttnGrads<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

pub fn window_attention_vjp<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    spec: &AttnSpec,
    g: &Tensor<T>,
) -> Result<AttnGrads<T>> {
    let (qs, vs) = (q.shape(), v.shape());
    let layout = spec.check(qs, k.shape(), vs)?;
    if g.shape() != vs {
        return shape_err(format!("attention upstream {} for output {vs}", g.shape()));
    }
    let (dq, dv) = (qs.c / spec.heads, vs.c / spec.heads);
    let mut gq = Tensor::zeros(qs);
    let mut gk = Tensor::zeros(qs);
    let mut gv = Tensor::zeros(vs);
    for n in 0..qs.n {
        for win in 0..layout.num_windows() {
            let px = layout.valid_pixels(win);
            for h in 0..spec.heads {
                let qm = gather(q, n, h * dq, dq, &px);
                let km = gather(k, n, h * dq, dq, &px);
                let vm = gather(v, n, h * dv, dv, &px);
                let a = softmax_rows(&logits(&qm, &km, spec.scale)?);
                let go = gather(g, n, h * dv, dv, &px);
                let (ga, gvm) = matmul_vjp(&a, &vm, &go)?;
                let mut gl = softmax_rows_vjp(&a, &ga)?;
                gl.data.iter_mut().for_each(|x| *x = T::from_f64(x.to_f64() * spec.scale));
                let (gqm, gkt) = matmul_vjp(&qm, &km.transpose(), &gl)?;
                scatter_add(&mut gq, &gqm, n, h * dq, &px);
                scatter_add(&mut gk, &gkt.transpose(), n, h * dq, &px);
                scatter_add(&mut gv, &gvm, n, h * dv, &px);
            }
        }
    }
    Ok(AttnGrads { q: gq, k: gk, v: gv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(rng: &mut Rng, s: Shape) -> Tensor<f64> {
        Tensor::from_fn(s, |_, _, _, _| rng.normal())
    }

    #[test]
    fn zero_logits_give_window_mean() {
        let mut rng = Rng::new(1);
        let q = Tensor::<f64>::zeros(Shape::new(1, 4, 4, 4));
        let v = rand(&mut rng, Shape::new(1, 6, 4, 4));
        let spec = AttnSpec::new(2, 2, 4);
        let out = window_attention(&q, &q, &v, &spec).unwrap();
        let layout = WindowLayout::new(4, 4, 2).unwrap();
        for win in 0..4 {
            let px = layout.valid_pixels(win);
            for c in 0..6 {
                let mean = px.iter().map(|&(y, x)| v.at(0, c, y, x)).sum::<f64>() / px.len() as f64;
                for &(y, x) in &px {
                    assert!((out.at(0, c, y, x) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_in_every_window_and_head() {
        let mut rng = Rng::new(2);
        let q = rand(&mut rng, Shape::new(2, 6, 5, 5));
        let k = rand(&mut rng, Shape::new(2, 6, 5, 5));
        for a in attention_weights(&q, &k, &AttnSpec::new(3, 2, 6)).unwrap() {
            for r in 0..a.rows {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_cross_window_leakage() {
        let mut rng = Rng::new(3);
        let q = rand(&mut rng, Shape::new(1, 2, 4, 4));
        let k = rand(&mut rng, Shape::new(1, 2, 4, 4));
        let mut v = rand(&mut rng, Shape::new(1, 2, 4, 4));
        let spec = AttnSpec::new(1, 2, 2);
        let before = window_attention(&q, &k, &v, &spec).unwrap();
        v.set(0, 0, 3, 3, 100.0);
        let after = window_attention(&q, &k, &v, &spec).unwrap();
        // only the bottom-right window may change
        for y in 0..4 {
            for x in 0..4 {
                if y < 2 || x < 2 {
                    assert_eq!(before.at(0, 0, y, x), after.at(0, 0, y, x));
                }
            }
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = Rng::new(4);
        let s = Shape::new(1, 4, 3, 3);
        let q = rand(&mut rng, s);
        let k = rand(&mut rng, s);
        let v = rand(&mut rng, Shape::new(1, 6, 3, 3));
        let spec = AttnSpec::new(2, 2, 4);
        let g = rand(&mut rng, v.shape());
        let grads = window_attention_vjp(&q, &k, &v, &spec, &g).unwrap();
        let loss = |q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>| {
            window_attention(q, k, v, &spec).unwrap().dot(&g).unwrap()
        };
        let h = 1e-5;
        for which in 0..3 {
            let (base, grad) = match which {
                0 => (&q, &grads.q),
                1 => (&k, &grads.k),
                _ => (&v, &grads.v),
            };
            for i in (0..base.data().len()).step_by(5) {
                let mut p = base.clone();
                let mut m = base.clone();
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let (lp, lm) = match which {
                    0 => (loss(&p, &k, &v), loss(&m, &k, &v)),
                    1 => (loss(&q, &p, &v), loss(&q, &m, &v)),
                    _ => (loss(&q, &k, &p), loss(&q, &k, &m)),
                };
                let fd = (lp - lm) / (2.0 * h);
                let a = grad.data()[i];
                assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) < 1e-4, "input {which} idx {i}: {a} vs {fd}");
            }
        }
    }
}
