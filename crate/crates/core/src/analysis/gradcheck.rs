//! Analytic gradients from [`Tape`] against central finite differences.
//!
//! The scalar under test is `<g, f(x)>` for a fixed random `g`. Coordinates
//! are drawn without replacement from the input and every parameter that
//! reaches the tape; running statistics are constants and are not sampled.

use serde::Serialize;

use crate::emo::Model;
use crate::error::{config_err, Result};
use crate::exec::{Eval, Exec};
use crate::init::{init_all, Init};
use crate::irmb::{AttnSpec, IrmbConfig};
use crate::mmb::{Block, ConvParams};
use crate::ops::{Activation, BatchNorm, ConvSpec, LayerNorm};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::{Param, Shape, Tensor};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

/// Something with parameters that maps one tensor to another.
pub trait Differentiable: Clone {
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var>;
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
}

impl Differentiable for Block<f64> {
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        self.forward(ex, x)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Block::params_mut(self)
    }
}

impl Differentiable for Vec<Block<f64>> {
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        let mut cur = x.clone();
        for b in self {
            cur = b.forward(ex, &cur)?;
        }
        Ok(cur)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

impl Differentiable for Model<f64> {
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        Ok(self.forward_features(ex, x)?.logits)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Model::params_mut(self)
    }
}

/// Single kernels, for checking each VJP in isolation.
#[derive(Debug, Clone)]
pub enum Primitive {
    Conv(ConvParams<f64>),
    BatchNorm(BatchNorm<f64>),
    LayerNorm(LayerNorm<f64>),
    Act(Activation),
    /// Self-attention with `q = k = v = x`.
    Attention(AttnSpec),
    /// `x + x`.
    Add,
    AvgPool,
}

impl Primitive {
    pub fn name(&self) -> String {
        match self {
            Primitive::Conv(c) if c.spec.is_depthwise() => format!("dwconv{}", c.spec.kernel),
            Primitive::Conv(c) => format!("conv{}g{}", c.spec.kernel, c.spec.groups),
            Primitive::BatchNorm(_) => "batchnorm".into(),
            Primitive::LayerNorm(_) => "layernorm".into(),
            Primitive::Act(a) => format!("{a:?}").to_lowercase(),
            Primitive::Attention(s) if s.window == usize::MAX => format!("attention_h{}_global", s.heads),
            Primitive::Attention(s) => format!("attention_h{}_w{}", s.heads, s.window),
            Primitive::Add => "add".into(),
            Primitive::AvgPool => "avgpool".into(),
        }
    }
}

impl Differentiable for Primitive {
    fn run<E: Exec<f64>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        match self {
            Primitive::Conv(c) => c.apply(ex, x),
            Primitive::BatchNorm(b) => ex.batch_norm(x, b),
            Primitive::LayerNorm(l) => ex.layer_norm(x, l),
            Primitive::Act(a) => ex.activate(x, *a),
            Primitive::Attention(s) => ex.attention(x, x, x, s),
            Primitive::Add => ex.add(x, x),
            Primitive::AvgPool => ex.avg_pool(x),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        match self {
            Primitive::Conv(c) => c.params_mut(),
            Primitive::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
            Primitive::LayerNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest error: `input[i]` or `param[i]`.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coord {
    Input(usize),
    Param(usize, usize),
}

/// `<g, f_plus - f_minus> / step`, where `step` is the representable
/// distance between the two perturbed coordinates. Differencing the outputs
/// before the dot product keeps unaffected entries at exactly zero.
fn central<A: Differentiable, B: Differentiable>(
    plus: (&A, &Tensor<f64>),
    minus: (&B, &Tensor<f64>),
    g: &Tensor<f64>,
    step: f64,
) -> Result<f64> {
    let yp = plus.0.run(&mut Eval::new(), plus.1)?;
    let ym = minus.0.run(&mut Eval::new(), minus.1)?;
    let diff: f64 = yp.data().iter().zip(ym.data()).zip(g.data()).map(|((p, m), g)| (p - m) * g).sum();
    Ok(diff / step)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn grad_check<N: Differentiable>(net: &N, x: &Tensor<f64>, seed: u64, samples: usize) -> Result<GradReport> {
    if samples == 0 {
        return config_err("gradient check needs at least one coordinate");
    }
    let mut rng = Rng::new(seed).fork(0x9c);
    let mut tape = Tape::new();
    let xi = tape.input(x.clone());
    let out = net.run(&mut tape, &xi)?;
    let g = Tensor::from_fn(tape.value(out).shape(), |_, _, _, _| rng.normal());
    let grads = tape.backward(out, &g)?;

    let mut probe = net.clone();
    let names: Vec<String> = probe.params_mut().iter().map(|p| p.name.clone()).collect();
    let mut coords: Vec<Coord> = (0..x.data().len()).map(Coord::Input).collect();
    for (pi, name) in names.iter().enumerate() {
        if let Ok(gp) = grads.param(name) {
            coords.extend((0..gp.len()).map(|j| Coord::Param(pi, j)));
        }
    }
    // partial Fisher-Yates: the first `take` entries become the sample
    let take = samples.min(coords.len());
    for i in 0..take {
        let j = i + rng.below(coords.len() - i);
        coords.swap(i, j);
    }

    let mut report =
        GradReport { coordinates: take, max_rel_err: 0.0, worst: String::new(), worst_analytic: 0.0, worst_numeric: 0.0 };
    for &c in &coords[..take] {
        let (analytic, numeric, label) = match c {
            Coord::Input(i) => {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.data_mut()[i] += FD_STEP;
                xm.data_mut()[i] -= FD_STEP;
                let step = xp.data()[i] - xm.data()[i];
                let n = central((net, &xp), (net, &xm), &g, step)?;
                (grads.inputs[0].data()[i], n, format!("input[{i}]"))
            }
            Coord::Param(pi, j) => {
                let base = probe.params_mut()[pi].data[j];
                let mut minus = probe.clone();
                probe.params_mut()[pi].data[j] = base + FD_STEP;
                minus.params_mut()[pi].data[j] = base - FD_STEP;
                let step = (base + FD_STEP) - (base - FD_STEP);
                let n = central((&probe, x), (&minus, x), &g, step)?;
                probe.params_mut()[pi].data[j] = base;
                (grads.param(&names[pi])?[j], n, format!("{}[{j}]", names[pi]))
            }
        };
        let e = rel_err(analytic, numeric);
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = label;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

/// One instance of every kernel with a VJP, on `channels` channels.
pub fn primitive_suite(channels: usize, seed: u64) -> Result<Vec<Primitive>> {
    if channels < 2 || !channels.is_multiple_of(2) {
        return config_err("primitive suite needs an even channel count >= 2");
    }
    let c = channels;
    let specs = [
        ConvSpec::new(c, c, 3, 1, 1),
        ConvSpec::new(c, c, 3, 2, 2),
        ConvSpec::pointwise(c, 2 * c, 1),
        ConvSpec::depthwise(c, 5, 1),
    ];
    let mut out = Vec::new();
    for (i, spec) in specs.into_iter().enumerate() {
        let mut conv = ConvParams::new(&format!("conv{i}"), spec);
        init_all(conv.params_mut(), seed, Init::Generic);
        out.push(Primitive::Conv(conv));
    }
    let mut bn = BatchNorm::new("bn", c);
    init_all([&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var], seed, Init::Generic);
    let mut ln = LayerNorm::new("ln", c);
    init_all([&mut ln.gamma, &mut ln.beta], seed, Init::Generic);
    out.extend([Primitive::BatchNorm(bn), Primitive::LayerNorm(ln)]);
    out.extend([Primitive::Act(Activation::Silu), Primitive::Act(Activation::Gelu)]);
    out.push(Primitive::Attention(AttnSpec::new(2, 3, c)));
    out.push(Primitive::Attention(AttnSpec::new(1, usize::MAX, c)));
    out.extend([Primitive::Add, Primitive::AvgPool]);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedCheck {
    pub name: String,
    #[serde(flatten)]
    pub report: GradReport,
}

/// Every primitive of [`primitive_suite`] plus a two-switch iRMB, each on a
/// `channels x map x map` normal input.
pub fn gradcheck_suite(channels: usize, map: usize, seed: u64, samples: usize) -> Result<Vec<NamedCheck>> {
    let mut rng = Rng::new(seed).fork(0x51e);
    let x = Tensor::<f64>::from_fn(Shape::new(1, channels, map, map), |_, _, _, _| rng.normal());
    let mut out = Vec::new();
    for p in primitive_suite(channels, seed)? {
        out.push(NamedCheck { name: p.name(), report: grad_check(&p, &x, seed, samples)? });
    }
    let cfg = IrmbConfig { window: Some(map / 2), heads: Some(2), ..IrmbConfig::new(channels, channels, 2.0) };
    let block = cfg.build::<f64>("irmb", seed, Init::Generic)?;
    out.push(NamedCheck { name: "irmb".into(), report: grad_check(&block, &x, seed, samples)? });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(seed: u64, s: Shape) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(s, |_, _, _, _| rng.normal())
    }

    #[test]
    fn linear_map_is_exact() {
        // small outputs keep the rounding of f(x +- h) far below the step
        let mut c = ConvParams::new("lin", ConvSpec::pointwise(4, 3, 1));
        crate::init::init_all(c.params_mut(), 1, Init::Default);
        let x = input(2, Shape::new(1, 4, 4, 4)).scale(1e-2);
        let r = grad_check(&Primitive::Conv(c), &x, 3, 200).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn full_block() {
        let cfg = IrmbConfig { window: Some(4), heads: Some(2), ..IrmbConfig::new(8, 8, 2.0) };
        let b = cfg.build::<f64>("b", 4, Init::Generic).unwrap();
        let r = grad_check(&b, &input(5, Shape::new(1, 8, 8, 8)), 6, 200).unwrap();
        assert_eq!(r.coordinates, 200);
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn suite_covers_every_primitive() {
        let checks = gradcheck_suite(4, 6, 1, 40).unwrap();
        assert_eq!(checks.len(), 13);
        for c in &checks {
            assert!(c.report.max_rel_err < 1e-4, "{}: {:?}", c.name, c.report);
        }
    }
}
