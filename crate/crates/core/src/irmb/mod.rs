//! Inverted Residual Mobile Block.
//!
//! `F = (DW-Conv, Skip)(EW-MHSA)`: windowed attention whose queries and keys
//! come from the unexpanded input while values are the `MLP_e` expansion,
//! cascaded with a depth-wise conv that carries its own skip connection.

pub mod attention;
pub mod window;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::init::Init;
use crate::mmb::{default_heads, expanded_width, AttnOrder, AttnPlan, Block, BlockPlan, ConvPlan};
use crate::ops::{Activation, NormKind};
use crate::rng::Rng;
use crate::tensor::{Precision, Scalar, Shape, Tensor};
use crate::exec::Eval;

pub use attention::{attention_weights, window_attention, window_attention_vjp, AttnGrads, AttnSpec};
pub use window::{window_merge, window_partition, WindowLayout, Windows};

fn yes() -> bool {
    true
}

fn three() -> usize {
    3
}

fn one() -> usize {
    1
}

/// One iRMB. Missing optional fields resolve at [`IrmbConfig::plan`] time;
/// `norm` and `act` absent means none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrmbConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion_ratio: f64,
    #[serde(default = "three")]
    pub kernel: usize,
    /// Window side in pixels; `None` is one global window.
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default = "one")]
    pub stride: usize,
    pub enable_attn: bool,
    pub enable_conv: bool,
    #[serde(default = "yes")]
    pub attn_first: bool,
    #[serde(default = "yes")]
    pub attn_pre_expand: bool,
    /// `MLP_e` group count; defaults to `heads` when attention runs before
    /// the expansion, 1 otherwise.
    #[serde(default)]
    pub expand_groups: Option<usize>,
    #[serde(default)]
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub act: Option<Activation>,
}

impl IrmbConfig {
    /// Both switches on, with the norm/activation binding of attention stages.
    pub fn new(in_channels: usize, out_channels: usize, expansion_ratio: f64) -> Self {
        IrmbConfig {
            in_channels,
            out_channels,
            expansion_ratio,
            kernel: 3,
            window: None,
            heads: None,
            stride: 1,
            enable_attn: true,
            enable_conv: true,
            attn_first: true,
            attn_pre_expand: true,
            expand_groups: None,
            norm: Some(NormKind::LayerNorm),
            act: Some(Activation::Gelu),
        }
    }

    pub fn mid_channels(&self) -> Result<usize> {
        expanded_width(self.in_channels, self.expansion_ratio)
    }

    pub fn resolved_heads(&self) -> Result<usize> {
        let mid = self.mid_channels()?;
        Ok(self.heads.unwrap_or_else(|| default_heads(self.in_channels, mid, 32)))
    }

    /// Attention-before-expansion only exists when attention is the first
    /// operator; otherwise the expansion has already happened.
    pub fn effective_pre_expand(&self) -> bool {
        self.enable_attn && self.attn_first && self.attn_pre_expand
    }

    pub fn plan(&self) -> Result<BlockPlan> {
        let plan = self.plan_relaxed()?;
        if let Some(a) = plan.attention {
            if a.pre_expand && plan.expand_groups != a.heads {
                return config_err(format!(
                    "attention before MLP_e needs MLP_e groups ({}) == heads ({})",
                    plan.expand_groups, a.heads
                ));
            }
        }
        Ok(plan)
    }

    /// Like [`plan`](Self::plan) without the groups == heads requirement, so
    /// the non-commuting case can still be built and measured.
    fn plan_relaxed(&self) -> Result<BlockPlan> {
        let mid = self.mid_channels()?;
        let heads = self.resolved_heads()?;
        let pre = self.effective_pre_expand();
        let groups = self.expand_groups.unwrap_or(if pre { heads } else { 1 });
        let plan = BlockPlan {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            mid_channels: mid,
            stride: self.stride,
            norm: self.norm,
            act: self.act,
            expand_groups: groups,
            attention: self.enable_attn.then_some(AttnPlan { heads, window: self.window, pre_expand: pre }),
            conv: self.enable_conv.then_some(ConvPlan { kernel: self.kernel, inner_skip: true }),
            attn_first: self.attn_first,
            residual: self.stride == 1 && self.in_channels == self.out_channels,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn build<T: Scalar>(&self, name: &str, seed: u64, init: Init) -> Result<Block<T>> {
        Block::new(name, self.plan()?, seed, init)
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, block: &Block<T>) -> Result<()> {
    if x.shape().c != block.plan.in_channels {
        return shape_err(format!("block `{}` expects {} channels, input is {}", block.name, block.plan.in_channels, x.shape()));
    }
    Ok(())
}

/// EW-MHSA in the block's configured ordering, without norm or activation.
pub fn ew_mhsa<T: Scalar>(x: &Tensor<T>, block: &Block<T>) -> Result<Tensor<T>> {
    check_input(x, block)?;
    let pre = block.plan.attention.map(|a| a.pre_expand).unwrap_or(false);
    let order = if pre { AttnOrder::BeforeExpand } else { AttnOrder::AfterExpand };
    block.ew_mhsa(&mut Eval::new(), x, order)
}

pub fn irmb_forward<T: Scalar>(x: &Tensor<T>, block: &Block<T>) -> Result<Tensor<T>> {
    check_input(x, block)?;
    block.run(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivReport {
    pub precision: Precision,
    pub heads: usize,
    pub expand_groups: usize,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub holds: bool,
}

pub fn equivalence_tolerance(p: Precision) -> f64 {
    match p {
        Precision::F64 => 1e-10,
        Precision::F32 => 1e-5,
    }
}

/// Evaluates EW-MHSA with the attention matrix applied before and after
/// `MLP_e` on seeded generic weights and input.
pub fn equivalence_check<T: Scalar>(cfg: &IrmbConfig, seed: u64) -> Result<EquivReport> {
    if !cfg.enable_attn {
        return config_err("equivalence check needs enable_attn");
    }
    let plan = cfg.plan_relaxed()?;
    let attn = plan.attention.expect("attention enabled");
    let block: Block<T> = Block::new("eq", plan, seed, Init::Generic)?;
    let side = cfg.window.map(|w| (2 * w + 1).min(9)).unwrap_or(5);
    let mut rng = Rng::new(seed).fork(0x6571);
    let x = Tensor::<T>::from_fn(Shape::new(2, cfg.in_channels, side, side), |_, _, _, _| rng.normal());
    let before = block.ew_mhsa(&mut Eval::new(), &x, AttnOrder::BeforeExpand)?;
    let after = block.ew_mhsa(&mut Eval::new(), &x, AttnOrder::AfterExpand)?;
    let diff = before.max_abs_diff(&after)?;
    let tolerance = equivalence_tolerance(T::PRECISION);
    Ok(EquivReport {
        precision: T::PRECISION,
        heads: attn.heads,
        expand_groups: plan.expand_groups,
        max_abs_diff: diff,
        tolerance,
        holds: diff < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{conv2d_raw, global_avg_pool};

    fn rand(seed: u64, s: Shape) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(s, |_, _, _, _| rng.normal())
    }

    fn eq_cfg(heads: usize, groups: usize) -> IrmbConfig {
        IrmbConfig { heads: Some(heads), expand_groups: Some(groups), window: Some(2), ..IrmbConfig::new(8, 8, 2.0) }
    }

    #[test]
    fn commutes_when_groups_equal_heads() {
        let r = equivalence_check::<f64>(&eq_cfg(4, 4), 7).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(equivalence_check::<f32>(&eq_cfg(4, 4), 7).unwrap().holds);
    }

    #[test]
    fn fails_with_ungrouped_expansion() {
        let r = equivalence_check::<f64>(&eq_cfg(4, 1), 7).unwrap();
        assert!(!r.holds && r.max_abs_diff > 1e-3, "{r:?}");
        assert!(eq_cfg(4, 1).plan().is_err());
    }

    #[test]
    fn single_head_always_commutes() {
        assert!(equivalence_check::<f64>(&eq_cfg(1, 1), 3).unwrap().holds);
    }

    #[test]
    fn single_token_is_pointwise_expansion() {
        let cfg = IrmbConfig { window: Some(1), heads: Some(2), ..IrmbConfig::new(4, 4, 2.0) };
        let b = cfg.build::<f64>("b", 1, Init::Generic).unwrap();
        let x = rand(2, Shape::new(1, 4, 3, 3));
        let e = &b.weights.expand;
        let oracle = conv2d_raw(&x, &e.weight.data, e.bias.as_ref().map(|p| p.data.as_slice()), &e.spec).unwrap();
        assert!(ew_mhsa(&x, &b).unwrap().max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn zero_qk_gives_window_mean_of_v() {
        let cfg = IrmbConfig { window: Some(2), heads: Some(1), attn_pre_expand: false, ..IrmbConfig::new(4, 4, 2.0) };
        let mut b = cfg.build::<f64>("b", 1, Init::Generic).unwrap();
        b.weights.q.as_mut().unwrap().zero();
        b.weights.k.as_mut().unwrap().zero();
        let x = rand(3, Shape::new(1, 4, 4, 4));
        let out = ew_mhsa(&x, &b).unwrap();
        let e = &b.weights.expand;
        let v = conv2d_raw(&x, &e.weight.data, e.bias.as_ref().map(|p| p.data.as_slice()), &e.spec).unwrap();
        for (wy, wx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            let tile = |t: &Tensor<f64>| -> Tensor<f64> {
                Tensor::from_fn(Shape::new(1, 8, 2, 2), |_, c, y, xx| t.at(0, c, wy + y, wx + xx).to_f64())
            };
            let mean = global_avg_pool(&tile(&v));
            let got = tile(&out);
            for c in 0..8 {
                for (y, xx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    assert!((got.at(0, c, y, xx) - mean.at(0, c, 0, 0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_only_matches_composed_primitives() {
        let cfg = IrmbConfig {
            enable_attn: false,
            norm: Some(NormKind::BatchNorm),
            act: Some(Activation::Silu),
            ..IrmbConfig::new(4, 4, 1.5)
        };
        let b = cfg.build::<f64>("b", 5, Init::Generic).unwrap();
        let x = rand(4, Shape::new(2, 4, 5, 5));
        let w = &b.weights;
        let conv = |t: &Tensor<f64>, c: &crate::mmb::ConvParams<f64>| {
            conv2d_raw(t, &c.weight.data, c.bias.as_ref().map(|p| p.data.as_slice()), &c.spec).unwrap()
        };
        let h = match w.norm.as_ref().unwrap() {
            crate::mmb::NormLayer::Batch(bn) => bn.forward(&x).unwrap(),
            _ => unreachable!(),
        };
        let e = Activation::Silu.forward(&conv(&h, &w.expand));
        let d = w.dw_norm.as_ref().unwrap().forward(&conv(&e, w.dw.as_ref().unwrap())).unwrap();
        let f = Activation::Silu.forward(&d).add(&e).unwrap();
        let oracle = x.add(&conv(&f, &w.shrink)).unwrap();
        assert!(irmb_forward(&x, &b).unwrap().max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn identity_everything_compounds_skips() {
        // norm off, identity MLPs, identity DW kernel, zero BN shift: the DW
        // branch yields silu(x), the inner skip adds x, the residual adds x
        let cfg = IrmbConfig { enable_attn: false, norm: None, act: None, ..IrmbConfig::new(2, 2, 1.0) };
        let mut b = cfg.build::<f64>("b", 0, Init::Default).unwrap();
        for c in [&mut b.weights.expand, &mut b.weights.shrink] {
            c.zero();
            c.weight.data[0] = 1.0;
            c.weight.data[3] = 1.0;
        }
        let dw = b.weights.dw.as_mut().unwrap();
        dw.zero();
        dw.weight.data[4] = 1.0;
        dw.weight.data[13] = 1.0;
        b.weights.dw_norm.as_mut().unwrap().eps = 0.0;
        let x = rand(6, Shape::new(1, 2, 4, 4));
        let expect = x.zip_map(&x, |v, _| Activation::Silu.apply(v) + 2.0 * v).unwrap();
        assert!(irmb_forward(&x, &b).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn stride_two_halves_and_skips_residual() {
        let cfg = IrmbConfig { stride: 2, window: Some(2), ..IrmbConfig::new(4, 4, 2.0) };
        let plan = cfg.plan().unwrap();
        assert!(!plan.residual);
        let b = cfg.build::<f64>("b", 1, Init::Generic).unwrap();
        let y = irmb_forward(&rand(1, Shape::new(1, 4, 8, 8)), &b).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 4, 4, 4));
    }

    #[test]
    fn zero_shrink_is_identity_for_every_switch() {
        for (attn, conv) in [(false, false), (true, false), (false, true), (true, true)] {
            for first in [true, false] {
                let cfg = IrmbConfig {
                    enable_attn: attn,
                    enable_conv: conv,
                    attn_first: first,
                    window: Some(2),
                    ..IrmbConfig::new(8, 8, 2.0)
                };
                let mut b = cfg.build::<f64>("b", 2, Init::Generic).unwrap();
                b.zero_shrink();
                let x = rand(8, Shape::new(1, 8, 5, 5));
                assert_eq!(irmb_forward(&x, &b).unwrap(), x);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let base = IrmbConfig::new(8, 8, 2.0);
        assert!(IrmbConfig { stride: 2, enable_conv: false, ..base }.plan().is_err());
        assert!(IrmbConfig { heads: Some(3), ..base }.plan().is_err());
        assert!(IrmbConfig { window: Some(0), ..base }.plan().is_err());
        assert!(IrmbConfig { expansion_ratio: 1.3, ..base }.plan().is_err());
        assert!(IrmbConfig { kernel: 4, ..base }.plan().is_err());
    }

    #[test]
    fn mlp_only_has_no_kernel_or_attention_params() {
        let cfg = IrmbConfig { enable_attn: false, enable_conv: false, norm: None, ..IrmbConfig::new(8, 8, 2.0) };
        let b = cfg.build::<f64>("b", 0, Init::Default).unwrap();
        let total: usize = b.params().iter().map(|p| p.len()).sum();
        assert_eq!(total, (8 * 16 + 16) + (16 * 8 + 8));
    }
}
