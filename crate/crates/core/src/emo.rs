//! Four-stage EMO network built only from iRMBs.
//!
//! Layout for a `224 x 224` input: a stride-2 stem (112), then four stages
//! whose first block downsamples with a stride-2 depth-wise conv (56, 28, 14,
//! 7), global average pooling and a linear classifier.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{decode_params, encode_params};
use crate::error::{config_err, Error, Result};
use crate::exec::{Eval, Exec, TraceCounts};
use crate::init::{init_all, Init};
use crate::irmb::IrmbConfig;
use crate::mmb::{default_heads, expanded_width, Block, BlockPlan, ConvParams};
use crate::ops::{Activation, BatchNorm, ConvSpec, NormKind};
use crate::tensor::{Param, Scalar, Tensor};

fn default_attn_stages() -> Vec<usize> {
    vec![3, 4]
}

fn default_windows() -> [Option<usize>; 4] {
    [Some(7); 4]
}

fn default_kernels() -> [usize; 4] {
    [3; 4]
}

fn default_stem() -> usize {
    24
}

fn default_classes() -> usize {
    1000
}

fn default_resolution() -> usize {
    224
}

fn default_head_dim() -> usize {
    32
}

fn default_ds_expansion() -> f64 {
    2.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmoVariantConfig {
    #[serde(default)]
    pub name: String,
    pub depths: [usize; 4],
    pub dims: [usize; 4],
    pub exp_ratios: [f64; 4],
    /// 1-based stage indices whose stride-1 blocks use EW-MHSA.
    #[serde(default = "default_attn_stages")]
    pub attn_stages: Vec<usize>,
    /// Attention window side per stage; `null` is one global window.
    #[serde(default = "default_windows")]
    pub windows: [Option<usize>; 4],
    #[serde(default = "default_kernels")]
    pub kernels: [usize; 4],
    #[serde(default = "default_stem")]
    pub stem_channels: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_head_dim")]
    pub max_head_dim: usize,
    /// Multiplier on the stage ratio for the stride-2 entry block.
    #[serde(default = "default_ds_expansion")]
    pub downsample_expansion: f64,
    #[serde(default)]
    pub attn_pre_expand: bool,
    /// Depth-wise conv in stride-1 blocks.
    #[serde(default = "yes")]
    pub enable_conv: bool,
    #[serde(default = "yes")]
    pub attn_first: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "emo-1m")]
    Emo1M,
    #[serde(rename = "emo-2m")]
    Emo2M,
    #[serde(rename = "emo-5m")]
    Emo5M,
    #[serde(rename = "emo-6m")]
    Emo6M,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Emo1M, Variant::Emo2M, Variant::Emo5M, Variant::Emo6M];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Emo1M => "emo-1m",
            Variant::Emo2M => "emo-2m",
            Variant::Emo5M => "emo-5m",
            Variant::Emo6M => "emo-6m",
        }
    }

    pub fn config(self) -> EmoVariantConfig {
        let (depths, dims, exp_ratios) = match self {
            Variant::Emo1M => ([2, 2, 8, 3], [32, 48, 80, 168], [2.0, 2.5, 3.0, 3.5]),
            Variant::Emo2M => ([3, 3, 9, 3], [32, 48, 120, 200], [2.0, 2.5, 3.0, 3.5]),
            Variant::Emo5M => ([3, 3, 9, 3], [48, 72, 160, 288], [2.0, 3.0, 4.0, 4.0]),
            // Widening stage 4 to 320 alone lands near 5.6M parameters; the
            // stage-4 ratio is raised to 5 to reach the reported size.
            Variant::Emo6M => ([3, 3, 9, 3], [48, 72, 160, 320], [2.0, 3.0, 4.0, 5.0]),
        };
        EmoVariantConfig {
            name: self.name().into(),
            depths,
            dims,
            exp_ratios,
            attn_stages: default_attn_stages(),
            windows: default_windows(),
            kernels: default_kernels(),
            stem_channels: default_stem(),
            num_classes: default_classes(),
            resolution: default_resolution(),
            max_head_dim: default_head_dim(),
            downsample_expansion: default_ds_expansion(),
            attn_pre_expand: false,
            enable_conv: true,
            attn_first: true,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected emo-1m, emo-2m, emo-5m or emo-6m)")))
    }
}

/// One block of the resolved model layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSlot {
    pub name: String,
    /// 1-based stage index.
    pub stage: usize,
    pub config: IrmbConfig,
    pub plan: BlockPlan,
    pub input_hw: (usize, usize),
    pub output_hw: (usize, usize),
}

impl EmoVariantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.contains(&0) || self.dims.contains(&0) {
            return config_err("every stage needs at least one block and a positive width");
        }
        if self.stem_channels == 0 || self.num_classes == 0 || self.max_head_dim == 0 {
            return config_err("stem width, class count and head width must be positive");
        }
        if let Some(s) = self.attn_stages.iter().find(|&&s| !(1..=4).contains(&s)) {
            return config_err(format!("attention stage {s} is not in 1..=4"));
        }
        self.check_resolution(self.resolution, self.resolution)
    }

    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || !h.is_multiple_of(32) || !w.is_multiple_of(32) {
            return config_err(format!("input {h}x{w} is not a positive multiple of 32 on both sides"));
        }
        Ok(())
    }

    /// Per-block configuration for an `h x w` input.
    pub fn layout(&self, h: usize, w: usize) -> Result<Vec<BlockSlot>> {
        self.check_resolution(h, w)?;
        let (mut h, mut w) = (h / 2, w / 2);
        let mut cin = self.stem_channels;
        let mut out = Vec::new();
        for s in 0..4 {
            for j in 0..self.depths[s] {
                let name = format!("stages.{}.{j}", s + 1);
                let entry = j == 0;
                let attn = !entry && self.attn_stages.contains(&(s + 1));
                let ratio = if entry { self.exp_ratios[s] * self.downsample_expansion } else { self.exp_ratios[s] };
                let mid = expanded_width(cin, ratio).map_err(|e| Error::Config(format!("block {name}: {e}")))?;
                let heads = default_heads(cin, mid, self.max_head_dim);
                let config = IrmbConfig {
                    in_channels: cin,
                    out_channels: self.dims[s],
                    expansion_ratio: ratio,
                    kernel: self.kernels[s],
                    window: self.windows[s],
                    heads: Some(heads),
                    stride: if entry { 2 } else { 1 },
                    enable_attn: attn,
                    // entry blocks downsample through the conv, so it stays
                    enable_conv: entry || self.enable_conv,
                    attn_first: self.attn_first,
                    attn_pre_expand: self.attn_pre_expand,
                    expand_groups: None,
                    norm: Some(if attn { NormKind::LayerNorm } else { NormKind::BatchNorm }),
                    act: Some(if attn { Activation::Gelu } else { Activation::Silu }),
                };
                let plan = config.plan().map_err(|e| Error::Config(format!("block {name}: {e}")))?;
                let output_hw = plan.output_hw(h, w)?;
                out.push(BlockSlot { name, stage: s + 1, config, plan, input_hw: (h, w), output_hw });
                (h, w) = output_hw;
                cin = self.dims[s];
            }
        }
        Ok(out)
    }

    pub fn stem_spec(&self) -> ConvSpec {
        ConvSpec::new(3, self.stem_channels, 3, 2, 1)
    }

    pub fn head_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.dims[3], self.num_classes, 1)
    }
}

/// Whether a parameter name denotes a running statistic rather than a
/// learnable weight.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: EmoVariantConfig,
    pub stem: ConvParams<T>,
    pub stem_norm: BatchNorm<T>,
    pub blocks: Vec<Block<T>>,
    /// 1-based stage index per block.
    pub stages: Vec<usize>,
    pub head: ConvParams<T>,
}

/// Activations captured during a forward pass.
#[derive(Debug, Clone)]
pub struct Features<V> {
    pub stem: V,
    /// Output of the last block of each stage.
    pub stages: Vec<V>,
    pub logits: V,
}

pub fn build_emo<T: Scalar>(cfg: &EmoVariantConfig, seed: u64, init: Init) -> Result<Model<T>> {
    cfg.validate()?;
    let slots = cfg.layout(cfg.resolution, cfg.resolution)?;
    let mut stem = ConvParams::new("stem.conv", cfg.stem_spec());
    let mut stem_norm = BatchNorm::new("stem.norm", cfg.stem_channels);
    let mut head = ConvParams::new("head", cfg.head_spec());
    init_all(
        stem.params_mut().into_iter().chain(head.params_mut()),
        seed,
        init,
    );
    init_all([&mut stem_norm.gamma, &mut stem_norm.beta, &mut stem_norm.running_mean, &mut stem_norm.running_var], seed, init);
    let blocks = slots.iter().map(|s| Block::new(s.name.clone(), s.plan, seed, init)).collect::<Result<Vec<_>>>()?;
    Ok(Model { config: cfg.clone(), stem, stem_norm, blocks, stages: slots.iter().map(|s| s.stage).collect(), head })
}

impl<T: Scalar> Model<T> {
    pub fn params(&self) -> Vec<&Param<T>> {
        let n = &self.stem_norm;
        let mut out = self.stem.params();
        out.extend([&n.gamma, &n.beta, &n.running_mean, &n.running_var]);
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let n = &mut self.stem_norm;
        let mut out = self.stem.params_mut();
        out.extend([&mut n.gamma, &mut n.beta, &mut n.running_mean, &mut n.running_var]);
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    /// Learnable parameters; norm running statistics are excluded.
    pub fn param_count(&self) -> usize {
        self.params().iter().filter(|p| !is_buffer(&p.name)).map(|p| p.len()).sum()
    }

    pub fn buffer_count(&self) -> usize {
        self.params().iter().filter(|p| is_buffer(&p.name)).map(|p| p.len()).sum()
    }

    pub fn forward_features<E: Exec<T>>(&self, ex: &mut E, x: &E::Var) -> Result<Features<E::Var>> {
        let s = ex.shape(x);
        if s.c != 3 {
            return config_err(format!("input has {} channels, expected 3", s.c));
        }
        self.config.check_resolution(s.h, s.w)?;
        let stem = self.stem.apply(ex, x)?;
        let stem = ex.batch_norm(&stem, &self.stem_norm)?;
        let stem = ex.activate(&stem, Activation::Silu)?;
        let mut cur = stem.clone();
        let mut stages = Vec::with_capacity(4);
        for (i, b) in self.blocks.iter().enumerate() {
            cur = b.forward(ex, &cur)?;
            if self.stages.get(i + 1) != Some(&self.stages[i]) {
                stages.push(cur.clone());
            }
        }
        let pooled = ex.avg_pool(&cur)?;
        let logits = self.head.apply(ex, &pooled)?;
        Ok(Features { stem, stages, logits })
    }

    /// Logits as an `N x classes x 1 x 1` tensor.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_features(&mut Eval::new(), x)?.logits)
    }

    /// Logits and the work counted by the kernels that produced them.
    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, TraceCounts)> {
        let mut ex = Eval::new();
        let logits = self.forward_features(&mut ex, x)?.logits;
        Ok((logits, ex.trace))
    }

    pub fn save_weights(&self) -> Result<Vec<u8>> {
        encode_params(self.params())
    }

    /// Replaces every parameter with the same-named record of a container.
    pub fn load_weights(&mut self, bytes: &[u8]) -> Result<()> {
        let mut records: HashMap<String, Param<T>> = decode_params::<T>(bytes)?.into_iter().map(|p| (p.name.clone(), p)).collect();
        for p in self.params_mut() {
            let rec = records
                .remove(&p.name)
                .ok_or_else(|| Error::Format(format!("container has no record for `{}`", p.name)))?;
            if rec.shape != p.shape {
                return Err(Error::Format(format!("`{}` has shape {:?} in container, model needs {:?}", p.name, rec.shape, p.shape)));
            }
            p.data = rec.data;
        }
        if let Some(extra) = records.keys().min() {
            return Err(Error::Format(format!("container record `{extra}` matches no model parameter")));
        }
        Ok(())
    }
}
