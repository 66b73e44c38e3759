//! Meta Mobile Block: expansion MLP, efficient operator, shrinkage MLP and a
//! single residual.
//!
//! Both MLPs are 1x1 (optionally grouped) convolutions, so the same code path
//! serves spatial maps of any size. A [`BlockPlan`] is the resolved form every
//! block configuration (MMB presets, iRMB) lowers to; [`Block`] owns the
//! weights for one plan and runs it on any [`Exec`] backend.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::exec::{Eval, Exec};
use crate::init::{init_all, Init};
use crate::irmb::attention::AttnSpec;
use crate::ops::{Activation, BatchNorm, ConvSpec, LayerNorm, NormKind};
use crate::tensor::{Param, Scalar, Tensor};

/// Width `lambda * C`, rejected unless it is a positive integer.
pub fn expanded_width(channels: usize, ratio: f64) -> Result<usize> {
    let mid = ratio * channels as f64;
    let rounded = mid.round();
    if !(ratio > 0.0) || rounded < 1.0 || (mid - rounded).abs() > 1e-9 {
        return config_err(format!("expansion ratio {ratio} x {channels} channels = {mid} is not a positive integer"));
    }
    Ok(rounded as usize)
}

/// Smallest head count with head width at most `max_head_dim` that divides
/// both the query/key width and the value width.
pub fn default_heads(qk_channels: usize, v_channels: usize, max_head_dim: usize) -> usize {
    let mut h = qk_channels.div_ceil(max_head_dim.max(1)).max(1);
    while !qk_channels.is_multiple_of(h) || !v_channels.is_multiple_of(h) {
        h += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    #[serde(rename = "dwconv")]
    DwConv,
    #[serde(rename = "ewmhsa")]
    EwMhsa,
    /// EW-MHSA followed by depth-wise conv with skip.
    CascadeAttnConv,
    /// Depth-wise conv with skip followed by attention.
    CascadeConvAttn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnPlan {
    pub heads: usize,
    /// Window side in pixels; `None` is one global window.
    pub window: Option<usize>,
    /// Apply the attention matrix to the unexpanded input before `MLP_e`.
    pub pre_expand: bool,
}

impl AttnPlan {
    pub fn spec(&self, qk_channels: usize) -> AttnSpec {
        AttnSpec::new(self.heads, self.window.unwrap_or(usize::MAX), qk_channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvPlan {
    pub kernel: usize,
    /// Additive skip around the depth-wise conv (only taken at stride 1).
    pub inner_skip: bool,
}

/// Fully resolved block structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub in_channels: usize,
    pub out_channels: usize,
    pub mid_channels: usize,
    pub stride: usize,
    /// Normalization applied to the block input before any projection.
    pub norm: Option<NormKind>,
    /// Activation after `MLP_e` (after EW-MHSA when attention comes first).
    pub act: Option<Activation>,
    pub expand_groups: usize,
    pub attention: Option<AttnPlan>,
    /// Depth-wise conv, always followed by BN + SiLU.
    pub conv: Option<ConvPlan>,
    pub attn_first: bool,
    pub residual: bool,
}

impl BlockPlan {
    pub fn validate(&self) -> Result<()> {
        let (cin, mid) = (self.in_channels, self.mid_channels);
        if cin == 0 || mid == 0 || self.out_channels == 0 {
            return config_err("block channel counts must be positive");
        }
        if self.stride == 0 || self.stride > 2 {
            return config_err(format!("block stride {} not in {{1, 2}}", self.stride));
        }
        if self.expand_groups == 0 || cin % self.expand_groups != 0 || mid % self.expand_groups != 0 {
            return config_err(format!(
                "expand groups {} must divide input width {cin} and expanded width {mid}",
                self.expand_groups
            ));
        }
        if self.stride > 1 && self.conv.is_none() {
            return config_err("stride 2 needs the depth-wise conv: no other downsampling path exists");
        }
        if let Some(c) = self.conv {
            if c.kernel % 2 == 0 {
                return config_err(format!("depth-wise kernel {} is even", c.kernel));
            }
        }
        if self.residual && (self.stride != 1 || cin != self.out_channels) {
            return config_err("outer residual needs stride 1 and equal in/out widths");
        }
        if let Some(a) = self.attention {
            if a.heads == 0 || cin % a.heads != 0 {
                return config_err(format!("heads {} must divide input width {cin}", a.heads));
            }
            if mid % a.heads != 0 {
                return config_err(format!("heads {} must divide expanded width {mid}", a.heads));
            }
            if a.window == Some(0) {
                return config_err("window size must be >= 1");
            }
            if a.pre_expand && !self.attn_first {
                return config_err("attention before MLP_e requires attention to come first");
            }
        }
        Ok(())
    }

    pub fn expand_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.in_channels, self.mid_channels, self.expand_groups)
    }

    pub fn shrink_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.mid_channels, self.out_channels, 1)
    }

    pub fn qk_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.in_channels, self.in_channels, 1)
    }

    pub fn dw_spec(&self) -> Option<ConvSpec> {
        self.conv.map(|c| ConvSpec::depthwise(self.mid_channels, c.kernel, self.stride))
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.dw_spec() {
            Some(spec) => spec.output_hw(h, w),
            None => Ok((h, w)),
        }
    }
}

/// Which side of `MLP_e` the attention matrix multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnOrder {
    /// `MLP_e(A x)`.
    BeforeExpand,
    /// `A MLP_e(x)`.
    AfterExpand,
}

/// MMB parameterization: channel width, expansion ratio and operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmbConfig {
    pub channels: usize,
    pub expansion_ratio: f64,
    pub operator: OperatorKind,
    #[serde(default = "one")]
    pub expand_groups: usize,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub attn_pre_expand: bool,
    #[serde(default)]
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub act: Option<Activation>,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Irb,
    Ffn,
    Mhsa,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irb" => Ok(Preset::Irb),
            "ffn" => Ok(Preset::Ffn),
            "mhsa" => Ok(Preset::Mhsa),
            other => config_err(format!("unknown MMB preset `{other}` (expected irb, ffn or mhsa)")),
        }
    }
}

/// Instantiates an MMB preset. `ratio` defaults to 4 for `ffn`; `mhsa` always
/// uses a channel-consistent projection (ratio 1).
pub fn mmb_instantiate(preset: Preset, channels: usize, ratio: Option<f64>) -> Result<MmbConfig> {
    let base = MmbConfig {
        channels,
        expansion_ratio: 1.0,
        operator: OperatorKind::Identity,
        expand_groups: 1,
        kernel: 3,
        window: None,
        heads: None,
        attn_pre_expand: false,
        norm: None,
        act: None,
    };
    let cfg = match preset {
        Preset::Irb => MmbConfig {
            expansion_ratio: ratio.unwrap_or(4.0),
            operator: OperatorKind::DwConv,
            norm: Some(NormKind::BatchNorm),
            act: Some(Activation::Silu),
            ..base
        },
        Preset::Ffn => MmbConfig {
            expansion_ratio: ratio.unwrap_or(4.0),
            norm: Some(NormKind::LayerNorm),
            act: Some(Activation::Gelu),
            ..base
        },
        Preset::Mhsa => MmbConfig { operator: OperatorKind::EwMhsa, norm: Some(NormKind::LayerNorm), ..base },
    };
    cfg.plan()?;
    Ok(cfg)
}

impl MmbConfig {
    pub fn mid_channels(&self) -> Result<usize> {
        expanded_width(self.channels, self.expansion_ratio)
    }

    pub fn plan(&self) -> Result<BlockPlan> {
        let mid = self.mid_channels()?;
        let has_attn = matches!(
            self.operator,
            OperatorKind::EwMhsa | OperatorKind::CascadeAttnConv | OperatorKind::CascadeConvAttn
        );
        let conv = match self.operator {
            OperatorKind::DwConv => Some(ConvPlan { kernel: self.kernel, inner_skip: false }),
            OperatorKind::CascadeAttnConv | OperatorKind::CascadeConvAttn => {
                Some(ConvPlan { kernel: self.kernel, inner_skip: true })
            }
            _ => None,
        };
        let attention = has_attn.then(|| AttnPlan {
            heads: self.heads.unwrap_or_else(|| default_heads(self.channels, mid, 32)),
            window: self.window,
            pre_expand: self.attn_pre_expand,
        });
        let plan = BlockPlan {
            in_channels: self.channels,
            out_channels: self.channels,
            mid_channels: mid,
            stride: 1,
            norm: self.norm,
            act: self.act,
            expand_groups: self.expand_groups,
            attention,
            conv,
            attn_first: self.operator != OperatorKind::CascadeConvAttn,
            residual: true,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormLayer<T> {
    Batch(BatchNorm<T>),
    Layer(LayerNorm<T>),
}

impl<T: Scalar> NormLayer<T> {
    fn new(kind: NormKind, prefix: &str, channels: usize) -> Self {
        match kind {
            NormKind::BatchNorm => NormLayer::Batch(BatchNorm::new(prefix, channels)),
            NormKind::LayerNorm => NormLayer::Layer(LayerNorm::new(prefix, channels)),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            NormLayer::Batch(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            NormLayer::Layer(l) => vec![&l.gamma, &l.beta],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            NormLayer::Batch(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
            NormLayer::Layer(l) => vec![&mut l.gamma, &mut l.beta],
        }
    }

    pub fn apply<E: Exec<T>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        match self {
            NormLayer::Batch(b) => ex.batch_norm(x, b),
            NormLayer::Layer(l) => ex.layer_norm(x, l),
        }
    }
}

/// Weight and bias of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(prefix: &str, spec: ConvSpec) -> Self {
        ConvParams {
            spec,
            weight: Param::filled(format!("{prefix}.weight"), spec.weight_shape(), 0.0),
            bias: spec.bias.then(|| Param::filled(format!("{prefix}.bias"), vec![spec.out_channels], 0.0)),
        }
    }

    pub fn apply<E: Exec<T>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        ex.conv(x, &self.weight, self.bias.as_ref(), &self.spec)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    pub fn zero(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.fill(0.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub norm: Option<NormLayer<T>>,
    pub q: Option<ConvParams<T>>,
    pub k: Option<ConvParams<T>>,
    pub expand: ConvParams<T>,
    pub dw: Option<ConvParams<T>>,
    pub dw_norm: Option<BatchNorm<T>>,
    pub shrink: ConvParams<T>,
}

/// One parameterized block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub name: String,
    pub plan: BlockPlan,
    pub weights: BlockWeights<T>,
}

impl<T: Scalar> Block<T> {
    pub fn new(name: impl Into<String>, plan: BlockPlan, seed: u64, init: Init) -> Result<Self> {
        plan.validate()?;
        let name = name.into();
        let p = |s: &str| format!("{name}.{s}");
        let weights = BlockWeights {
            norm: plan.norm.map(|k| NormLayer::new(k, &p("norm"), plan.in_channels)),
            q: plan.attention.map(|_| ConvParams::new(&p("q"), plan.qk_spec())),
            k: plan.attention.map(|_| ConvParams::new(&p("k"), plan.qk_spec())),
            expand: ConvParams::new(&p("expand"), plan.expand_spec()),
            dw: plan.dw_spec().map(|s| ConvParams::new(&p("dw"), s)),
            dw_norm: plan.conv.map(|_| BatchNorm::new(&p("dw_norm"), plan.mid_channels)),
            shrink: ConvParams::new(&p("shrink"), plan.shrink_spec()),
        };
        let mut block = Block { name, plan, weights };
        init_all(block.params_mut(), seed, init);
        Ok(block)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let w = &self.weights;
        let mut out = Vec::new();
        if let Some(n) = &w.norm {
            out.extend(n.params());
        }
        for c in [&w.q, &w.k].into_iter().flatten() {
            out.extend(c.params());
        }
        out.extend(w.expand.params());
        if let Some(c) = &w.dw {
            out.extend(c.params());
        }
        if let Some(b) = &w.dw_norm {
            out.extend([&b.gamma, &b.beta, &b.running_mean, &b.running_var]);
        }
        out.extend(w.shrink.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let w = &mut self.weights;
        let mut out = Vec::new();
        if let Some(n) = &mut w.norm {
            out.extend(n.params_mut());
        }
        for c in [&mut w.q, &mut w.k].into_iter().flatten() {
            out.extend(c.params_mut());
        }
        out.extend(w.expand.params_mut());
        if let Some(c) = &mut w.dw {
            out.extend(c.params_mut());
        }
        if let Some(b) = &mut w.dw_norm {
            out.extend([&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]);
        }
        out.extend(w.shrink.params_mut());
        out
    }

    /// Zeroes `MLP_s`, which turns a residual block into the identity.
    pub fn zero_shrink(&mut self) {
        self.weights.shrink.zero();
    }

    fn act<E: Exec<T>>(&self, ex: &mut E, x: E::Var) -> Result<E::Var> {
        match self.plan.act {
            Some(a) => ex.activate(&x, a),
            None => Ok(x),
        }
    }

    /// EW-MHSA on an (already normalized) input: Q and K are projections of
    /// the unexpanded input, V is the `MLP_e` expansion.
    pub fn ew_mhsa<E: Exec<T>>(&self, ex: &mut E, x: &E::Var, order: AttnOrder) -> Result<E::Var> {
        let plan = self.plan.attention.ok_or_else(|| Error::Config(format!("block `{}` has no attention", self.name)))?;
        let w = &self.weights;
        let (q, k) = match (&w.q, &w.k) {
            (Some(q), Some(k)) => (q.apply(ex, x)?, k.apply(ex, x)?),
            _ => return config_err(format!("block `{}` is missing q/k projections", self.name)),
        };
        let spec = plan.spec(self.plan.in_channels);
        match order {
            AttnOrder::BeforeExpand => {
                let a = ex.attention(&q, &k, x, &spec)?;
                w.expand.apply(ex, &a)
            }
            AttnOrder::AfterExpand => {
                let v = w.expand.apply(ex, x)?;
                ex.attention(&q, &k, &v, &spec)
            }
        }
    }

    fn conv_part<E: Exec<T>>(&self, ex: &mut E, e: E::Var) -> Result<E::Var> {
        let (Some(cp), Some(dw), Some(bn)) = (self.plan.conv, &self.weights.dw, &self.weights.dw_norm) else {
            return Ok(e);
        };
        let c = dw.apply(ex, &e)?;
        let c = ex.batch_norm(&c, bn)?;
        let c = ex.activate(&c, Activation::Silu)?;
        if cp.inner_skip && self.plan.stride == 1 {
            ex.add(&c, &e)
        } else {
            Ok(c)
        }
    }

    pub fn forward<E: Exec<T>>(&self, ex: &mut E, x: &E::Var) -> Result<E::Var> {
        let h = match &self.weights.norm {
            Some(n) => n.apply(ex, x)?,
            None => x.clone(),
        };
        let f = match self.plan.attention {
            Some(a) if self.plan.attn_first => {
                let order = if a.pre_expand { AttnOrder::BeforeExpand } else { AttnOrder::AfterExpand };
                let e = self.ew_mhsa(ex, &h, order)?;
                let e = self.act(ex, e)?;
                self.conv_part(ex, e)?
            }
            Some(a) => {
                let e = self.weights.expand.apply(ex, &h)?;
                let e = self.act(ex, e)?;
                let c = self.conv_part(ex, e)?;
                let (Some(q), Some(k)) = (&self.weights.q, &self.weights.k) else {
                    return config_err(format!("block `{}` is missing q/k projections", self.name));
                };
                let (q, k) = (q.apply(ex, &h)?, k.apply(ex, &h)?);
                if self.plan.stride != 1 {
                    return Err(Error::Unsupported("attention after a strided conv".into()));
                }
                ex.attention(&q, &k, &c, &a.spec(self.plan.in_channels))?
            }
            None => {
                let e = self.weights.expand.apply(ex, &h)?;
                let e = self.act(ex, e)?;
                self.conv_part(ex, e)?
            }
        };
        let s = self.weights.shrink.apply(ex, &f)?;
        if self.plan.residual {
            ex.add(x, &s)
        } else {
            Ok(s)
        }
    }

    /// Direct evaluation convenience.
    pub fn run(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(&mut Eval::new(), x)
    }
}

/// `Y = X + MLP_s(F(MLP_e(X)))` for an MMB config with the given weights.
pub fn mmb_forward<T: Scalar>(x: &Tensor<T>, block: &Block<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.c != block.plan.in_channels {
        return Err(Error::Shape(format!("block `{}` expects {} channels, input is {s}", block.name, block.plan.in_channels)));
    }
    block.run(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv2d_raw;
    use crate::rng::Rng;
    use crate::tensor::Shape;

    fn rand_input(seed: u64, c: usize, hw: usize) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(Shape::new(2, c, hw, hw), |_, _, _, _| rng.normal())
    }

    fn bare(channels: usize, ratio: f64, operator: OperatorKind) -> MmbConfig {
        MmbConfig {
            channels,
            expansion_ratio: ratio,
            operator,
            expand_groups: 1,
            kernel: 3,
            window: None,
            heads: None,
            attn_pre_expand: false,
            norm: None,
            act: None,
        }
    }

    #[test]
    fn fractional_width_rejected() {
        assert!(expanded_width(7, 2.5).is_err());
        assert_eq!(expanded_width(48, 2.5).unwrap(), 120);
        assert!(bare(5, 0.5, OperatorKind::Identity).plan().is_err());
        assert!(expanded_width(4, -1.0).is_err());
    }

    #[test]
    fn zero_shrink_is_identity() {
        let x = rand_input(1, 4, 5);
        let mut b = Block::<f64>::new("b", bare(4, 2.0, OperatorKind::Identity).plan().unwrap(), 3, Init::Generic).unwrap();
        b.zero_shrink();
        assert_eq!(mmb_forward(&x, &b).unwrap(), x);
    }

    #[test]
    fn identity_mlps_double_the_input() {
        let x = rand_input(2, 3, 4);
        let mut b = Block::<f64>::new("b", bare(3, 1.0, OperatorKind::Identity).plan().unwrap(), 0, Init::Default).unwrap();
        for conv in [&mut b.weights.expand, &mut b.weights.shrink] {
            conv.zero();
            for i in 0..3 {
                conv.weight.data[i * 3 + i] = 1.0;
            }
        }
        assert_eq!(mmb_forward(&x, &b).unwrap(), x.scale(2.0));
    }

    #[test]
    fn matches_composed_pointwise_oracle() {
        let x = rand_input(3, 4, 6);
        let b = Block::<f64>::new("b", bare(4, 2.0, OperatorKind::Identity).plan().unwrap(), 9, Init::Generic).unwrap();
        let w = &b.weights;
        let e = conv2d_raw(&x, &w.expand.weight.data, w.expand.bias.as_ref().map(|p| p.data.as_slice()), &w.expand.spec).unwrap();
        assert_eq!(e.shape().c, 8);
        let s = conv2d_raw(&e, &w.shrink.weight.data, w.shrink.bias.as_ref().map(|p| p.data.as_slice()), &w.shrink.spec).unwrap();
        let oracle = x.add(&s).unwrap();
        assert!(mmb_forward(&x, &b).unwrap().max_abs_diff(&oracle).unwrap() < 1e-10);
    }

    #[test]
    fn presets() {
        let ffn = mmb_instantiate(Preset::Ffn, 8, None).unwrap();
        assert_eq!(ffn.mid_channels().unwrap(), 32);
        assert_eq!(ffn.operator, OperatorKind::Identity);
        let irb = mmb_instantiate(Preset::Irb, 8, Some(1.0)).unwrap();
        assert_eq!(irb.operator, OperatorKind::DwConv);
        let mhsa = mmb_instantiate(Preset::Mhsa, 8, Some(3.0)).unwrap();
        assert_eq!((mhsa.operator, mhsa.expansion_ratio), (OperatorKind::EwMhsa, 1.0));
        assert!("moe".parse::<Preset>().is_err());
    }

    #[test]
    fn shape_contract_for_all_operators() {
        for op in [
            OperatorKind::Identity,
            OperatorKind::DwConv,
            OperatorKind::EwMhsa,
            OperatorKind::CascadeAttnConv,
            OperatorKind::CascadeConvAttn,
        ] {
            let mut cfg = bare(8, 2.0, op);
            cfg.window = Some(2);
            cfg.norm = Some(NormKind::LayerNorm);
            cfg.act = Some(Activation::Gelu);
            let mut b = Block::<f64>::new("b", cfg.plan().unwrap(), 4, Init::Generic).unwrap();
            let x = rand_input(5, 8, 5);
            assert_eq!(mmb_forward(&x, &b).unwrap().shape(), x.shape(), "{op:?}");
            b.zero_shrink();
            assert_eq!(mmb_forward(&x, &b).unwrap(), x, "{op:?}");
        }
    }

    #[test]
    fn default_head_rule() {
        assert_eq!(default_heads(64, 128, 32), 2);
        assert_eq!(default_heads(8, 16, 32), 1);
        assert_eq!(default_heads(80, 240, 32), 4);
        assert_eq!(default_heads(200, 700, 32), 10);
    }
}
