//! Grouped 2-D cross-correlation with zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// `k x k` convolution with "same" padding `(k - 1) / 2`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, groups: usize) -> Self {
        ConvSpec { in_channels, out_channels, kernel, stride, padding: kernel / 2, groups, bias: true }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize, groups: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, 1, 1, groups)
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec::new(channels, channels, kernel, stride, channels)
    }

    pub fn without_bias(self) -> Self {
        ConvSpec { bias: false, ..self }
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return config_err(format!("conv {self:?}: channel and group counts must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return config_err(format!("conv kernel {} is even; padding symmetry undefined", self.kernel));
        }
        if self.stride == 0 {
            return config_err("conv stride must be >= 1");
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return config_err(format!(
                "conv groups {} must divide in {} and out {}",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_per_group(), self.kernel, self.kernel]
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_per_group() * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> u64 {
        (self.weight_len() + if self.bias { self.out_channels } else { 0 }) as u64
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return shape_err(format!("input {h}x{w} smaller than kernel {k} with padding {}", self.padding));
        }
        Ok(((h + 2 * self.padding - k) / self.stride + 1, (w + 2 * self.padding - k) / self.stride + 1))
    }

    /// Multiply-accumulates per batch item: `(C_out * k^2 * C_in / G) * H_out * W_out`.
    pub fn macs(&self, h_out: usize, w_out: usize) -> u64 {
        (self.weight_len() * h_out * w_out) as u64
    }
}

fn check_inputs<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, spec: &ConvSpec) -> Result<Shape> {
    spec.validate()?;
    let s = x.shape();
    if s.c != spec.in_channels {
        return shape_err(format!("conv expects {} input channels, input is {s}", spec.in_channels));
    }
    if weight.len() != spec.weight_len() {
        return shape_err(format!(
            "conv weight needs {} values for shape {:?}, got {}",
            spec.weight_len(),
            spec.weight_shape(),
            weight.len()
        ));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.len() == spec.out_channels => {}
        (false, None) => {}
        (true, Some(b)) => return shape_err(format!("conv bias needs {} values, got {}", spec.out_channels, b.len())),
        (true, None) => return shape_err("conv spec has bias but none was given"),
        (false, Some(_)) => return shape_err("conv spec has no bias but one was given"),
    }
    let (ho, wo) = spec.output_hw(s.h, s.w)?;
    Ok(Shape::new(s.n, spec.out_channels, ho, wo))
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `tap`.
#[inline]
fn tap_range(tap: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + tap - pad must lie in [0, in_len)
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if in_len + pad > tap { ((in_len + pad - tap - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

/// Forward convolution on a raw weight slice laid out `(C_out, C_in/G, k, k)`.
pub fn conv2d_raw<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = check_inputs(x, weight, bias, spec)?;
    let s = x.shape();
    let (k, st, pad) = (spec.kernel, spec.stride, spec.padding);
    let (ho, wo) = (out_shape.h, out_shape.w);
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut acc = vec![0.0f64; ho * wo];

    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let g = co / cout_g;
            let b0 = bias.map_or(0.0, |b| b[co].to_f64());
            acc.iter_mut().for_each(|a| *a = b0);
            for cig in 0..cin_g {
                let ci = g * cin_g + cig;
                let xplane = &xd[(n * s.c + ci) * s.h * s.w..][..s.h * s.w];
                let wbase = (co * cin_g + cig) * k * k;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = tap_range(ky, pad, st, s.h, ho);
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx].to_f64();
                        let (ox_lo, ox_hi) = tap_range(kx, pad, st, s.w, wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * st + ky - pad;
                            let row = &xplane[iy * s.w..(iy + 1) * s.w];
                            let arow = &mut acc[oy * wo..(oy + 1) * wo];
                            if st == 1 {
                                let off = kx as isize - pad as isize;
                                for ox in ox_lo..ox_hi {
                                    arow[ox] += wv * row[(ox as isize + off) as usize].to_f64();
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    arow[ox] += wv * row[ox * st + kx - pad].to_f64();
                                }
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&a| T::from_f64(a)));
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Forward convolution with a weight tensor shaped `(C_out, C_in/G, k, k)`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let ws = weight.shape();
    let expect = Shape::new(spec.out_channels, spec.in_per_group(), spec.kernel, spec.kernel);
    if ws != expect {
        return shape_err(format!("conv weight is {ws}, expected {expect}"));
    }
    conv2d_raw(x, weight.data(), bias, spec)
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Vector-Jacobian product of [`conv2d_raw`] for upstream gradient `g`.
pub fn conv2d_vjp<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    spec: &ConvSpec,
    g: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let bias_probe: Option<Vec<T>> = spec.bias.then(|| vec![T::default(); spec.out_channels]);
    let out_shape = check_inputs(x, weight, bias_probe.as_deref(), spec)?;
    if g.shape() != out_shape {
        return shape_err(format!("conv upstream is {}, output is {out_shape}", g.shape()));
    }
    let s = x.shape();
    let (k, st, pad) = (spec.kernel, spec.stride, spec.padding);
    let (ho, wo) = (out_shape.h, out_shape.w);
    let (cin_g, cout_g) = (spec.in_per_group(), spec.out_per_group());
    let xd = x.data();
    let gd = g.data();
    let mut gx = vec![0.0f64; s.numel()];
    let mut gw = vec![0.0f64; weight.len()];
    let mut gb = vec![0.0f64; spec.out_channels];

    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let grp = co / cout_g;
            let gplane = &gd[(n * spec.out_channels + co) * ho * wo..][..ho * wo];
            gb[co] += gplane.iter().map(|v| v.to_f64()).sum::<f64>();
            for cig in 0..cin_g {
                let ci = grp * cin_g + cig;
                let xoff = (n * s.c + ci) * s.h * s.w;
                let wbase = (co * cin_g + cig) * k * k;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = tap_range(ky, pad, st, s.h, ho);
                    for kx in 0..k {
                        let wv = weight[wbase + ky * k + kx].to_f64();
                        let (ox_lo, ox_hi) = tap_range(kx, pad, st, s.w, wo);
                        let mut wacc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * st + ky - pad;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * st + kx - pad;
                                let gv = gplane[oy * wo + ox].to_f64();
                                let xi = xoff + iy * s.w + ix;
                                wacc += gv * xd[xi].to_f64();
                                gx[xi] += gv * wv;
                            }
                        }
                        gw[wbase + ky * k + kx] += wacc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(s, gx.into_iter().map(T::from_f64).collect()),
        weight: gw.into_iter().map(T::from_f64).collect(),
        bias: spec.bias.then(|| gb.into_iter().map(T::from_f64).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_depthwise_kernel_is_identity() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let spec = ConvSpec::depthwise(1, 3, 1).without_bias();
        let y = conv2d_raw(&x, &w, None, &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pointwise_scaling() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let spec = ConvSpec::pointwise(1, 1, 1).without_bias();
        let y = conv2d_raw(&x, &[2.0], None, &spec).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn mac_count_matches_hand_evaluation() {
        // C=4, k=3, G=1 on 8x8 at stride 1: (4*9)*64*4 = 9216 = 18432 / 2
        let spec = ConvSpec::new(4, 4, 3, 1, 1);
        let (ho, wo) = spec.output_hw(8, 8).unwrap();
        assert_eq!((ho, wo), (8, 8));
        assert_eq!(spec.macs(ho, wo), 9216);
    }

    #[test]
    fn output_size_formula() {
        let spec = ConvSpec { in_channels: 1, out_channels: 1, kernel: 5, stride: 2, padding: 1, groups: 1, bias: false };
        assert_eq!(spec.output_hw(11, 8).unwrap(), ((11 + 2 - 5) / 2 + 1, (8 + 2 - 5) / 2 + 1));
    }

    #[test]
    fn even_kernel_and_bad_groups_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 4, 4, 4));
        let mut spec = ConvSpec::new(4, 4, 2, 1, 1);
        assert!(conv2d_raw(&x, &vec![0.0; spec.weight_len()], Some(&[0.0; 4]), &spec).is_err());
        spec = ConvSpec::new(4, 6, 3, 1, 4);
        assert!(spec.validate().is_err());
        let spec = ConvSpec::new(3, 4, 3, 1, 1);
        assert!(matches!(
            conv2d_raw(&x, &vec![0.0; spec.weight_len()], Some(&[0.0; 4]), &spec),
            Err(crate::Error::Shape(_))
        ));
    }

    /// Direct oracle: every output evaluated from the definition with explicit bounds checks.
    fn conv_oracle(x: &Tensor<f64>, w: &[f64], b: Option<&[f64]>, spec: &ConvSpec) -> Tensor<f64> {
        let s = x.shape();
        let (ho, wo) = spec.output_hw(s.h, s.w).unwrap();
        let k = spec.kernel as isize;
        Tensor::from_fn(Shape::new(s.n, spec.out_channels, ho, wo), |n, co, oy, ox| {
            let g = co / spec.out_per_group();
            let mut acc = b.map_or(0.0, |b| b[co]);
            for cig in 0..spec.in_per_group() {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * spec.stride) as isize + ky - spec.padding as isize;
                        let ix = (ox * spec.stride) as isize + kx - spec.padding as isize;
                        if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                            continue;
                        }
                        let wi = ((co * spec.in_per_group() + cig) * spec.kernel + ky as usize) * spec.kernel + kx as usize;
                        acc += w[wi] * x.at(n, g * spec.in_per_group() + cig, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matches_direct_oracle_on_random_specs() {
        let mut rng = Rng::new(3);
        for (cin, cout, k, st, g) in [(4, 6, 3, 1, 2), (4, 4, 3, 2, 4), (3, 5, 5, 1, 1), (6, 6, 5, 2, 3), (2, 4, 1, 1, 1)] {
            let spec = ConvSpec::new(cin, cout, k, st, g);
            let x = Tensor::from_fn(Shape::new(2, cin, 7, 6), |_, _, _, _| rng.uniform(-1.0, 1.0));
            let w = rng.uniform_vec(spec.weight_len(), -1.0, 1.0);
            let b = rng.uniform_vec(cout, -1.0, 1.0);
            let y = conv2d_raw(&x, &w, Some(&b), &spec).unwrap();
            let o = conv_oracle(&x, &w, Some(&b), &spec);
            assert!(y.max_abs_diff(&o).unwrap() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn vjp_is_adjoint_of_forward() {
        // <g, conv(x)> without bias is bilinear; check <g, A x> == <A^T g, x>
        let mut rng = Rng::new(11);
        let spec = ConvSpec::new(4, 6, 3, 2, 2).without_bias();
        let x = Tensor::from_fn(Shape::new(1, 4, 7, 7), |_, _, _, _| rng.normal());
        let w = rng.uniform_vec(spec.weight_len(), -1.0, 1.0);
        let y = conv2d_raw(&x, &w, None, &spec).unwrap();
        let g = Tensor::from_fn(y.shape(), |_, _, _, _| rng.normal());
        let grads = conv2d_vjp(&x, &w, &spec, &g).unwrap();
        let lhs = g.dot(&y).unwrap();
        assert!((lhs - grads.input.dot(&x).unwrap()).abs() < 1e-10);
        let wdot: f64 = grads.weight.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - wdot).abs() < 1e-10);
    }
}
