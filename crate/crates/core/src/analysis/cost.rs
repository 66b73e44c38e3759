//! Static parameter and MAC accounting.
//!
//! Counts are derived from block plans and spatial sizes alone; nothing here
//! runs a kernel. Convolutions cost `weight_len * H_out * W_out` MACs, the
//! attention matmuls cost `pairs * (C_qk + C_v)`, and the softmax is charged
//! three flops per logit per head outside the MAC count. Bias additions and
//! normalization are not MACs. Learnable parameters exclude norm running
//! statistics, which are reported separately as buffers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::Serialize;

use crate::emo::EmoVariantConfig;
use crate::error::Result;
use crate::mmb::BlockPlan;
use crate::ops::ConvSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Stem,
    Mlp,
    Attention,
    #[serde(rename = "dwconv")]
    DwConv,
    Norm,
    Head,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Stem, Category::Mlp, Category::Attention, Category::DwConv, Category::Norm, Category::Head];

    pub fn name(self) -> &'static str {
        match self {
            Category::Stem => "stem",
            Category::Mlp => "mlp",
            Category::Attention => "attention",
            Category::DwConv => "dwconv",
            Category::Norm => "norm",
            Category::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostRecord {
    pub params: u64,
    pub macs: u64,
    pub softmax_flops: u64,
    /// `2 * macs + softmax_flops`.
    pub flops_2x: u64,
}

impl CostRecord {
    fn new(params: u64, macs: u64, softmax_flops: u64) -> Self {
        CostRecord { params, macs, softmax_flops, flops_2x: 2 * macs + softmax_flops }
    }

    fn conv(spec: &ConvSpec, h_out: usize, w_out: usize) -> Self {
        CostRecord::new(spec.param_count(), spec.macs(h_out, w_out), 0)
    }
}

impl AddAssign for CostRecord {
    fn add_assign(&mut self, o: Self) {
        self.params += o.params;
        self.macs += o.macs;
        self.softmax_flops += o.softmax_flops;
        self.flops_2x += o.flops_2x;
    }
}

pub type Breakdown = BTreeMap<Category, CostRecord>;

fn charge(b: &mut Breakdown, cat: Category, r: CostRecord) {
    *b.entry(cat).or_default() += r;
}

/// Sum over windows of squared valid-token counts along one axis.
fn axis_pairs(len: usize, window: usize) -> u64 {
    let w = window.min(len) as u64;
    let len = len as u64;
    let full = len / w;
    let rest = len % w;
    full * w * w + rest * rest
}

/// Query/key pairs of windowed attention on an `h x w` map; padding slots
/// take no part, so the count factors over the two axes.
pub fn attention_pairs(h: usize, w: usize, window: Option<usize>) -> u64 {
    let win = window.unwrap_or(usize::MAX);
    axis_pairs(h, win) * axis_pairs(w, win)
}

/// Costs of one block on an `h x w` input, by category.
pub fn count_block(plan: &BlockPlan, h: usize, w: usize) -> Result<Breakdown> {
    plan.validate()?;
    let (ho, wo) = plan.output_hw(h, w)?;
    let mut b = Breakdown::new();
    if plan.norm.is_some() {
        charge(&mut b, Category::Norm, CostRecord::new(2 * plan.in_channels as u64, 0, 0));
    }
    if let Some(a) = plan.attention {
        let qk = plan.qk_spec();
        charge(&mut b, Category::Attention, CostRecord::conv(&qk, h, w));
        charge(&mut b, Category::Attention, CostRecord::conv(&qk, h, w));
        // attention runs at the input resolution: a conv placed before it
        // keeps stride 1 (enforced by the forward pass)
        let pairs = attention_pairs(h, w, a.window);
        let v = if a.pre_expand { plan.in_channels } else { plan.mid_channels };
        let macs = pairs * (plan.in_channels + v) as u64;
        charge(&mut b, Category::Attention, CostRecord::new(0, macs, 3 * pairs * a.heads as u64));
    }
    charge(&mut b, Category::Mlp, CostRecord::conv(&plan.expand_spec(), h, w));
    if let Some(dw) = plan.dw_spec() {
        charge(&mut b, Category::DwConv, CostRecord::conv(&dw, ho, wo));
        charge(&mut b, Category::Norm, CostRecord::new(2 * plan.mid_channels as u64, 0, 0));
    }
    charge(&mut b, Category::Mlp, CostRecord::conv(&plan.shrink_spec(), ho, wo));
    Ok(b)
}

pub fn total(b: &Breakdown) -> CostRecord {
    let mut t = CostRecord::default();
    b.values().for_each(|r| t += *r);
    t
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCost {
    pub name: String,
    pub stage: usize,
    pub input_hw: (usize, usize),
    pub output_hw: (usize, usize),
    pub categories: Breakdown,
    pub total: CostRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fraction {
    pub params: f64,
    pub macs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub model: String,
    pub resolution: (usize, usize),
    pub blocks: Vec<BlockCost>,
    pub categories: Breakdown,
    pub totals: CostRecord,
    pub fractions: BTreeMap<Category, Fraction>,
    /// Norm running statistics (not learnable).
    pub buffers: u64,
}

pub fn count_costs(cfg: &EmoVariantConfig, h: usize, w: usize) -> Result<CostReport> {
    cfg.validate()?;
    let slots = cfg.layout(h, w)?;
    let mut categories = Breakdown::new();
    let (sh, sw) = cfg.stem_spec().output_hw(h, w)?;
    charge(&mut categories, Category::Stem, CostRecord::conv(&cfg.stem_spec(), sh, sw));
    charge(&mut categories, Category::Norm, CostRecord::new(2 * cfg.stem_channels as u64, 0, 0));
    let mut buffers = 2 * cfg.stem_channels as u64;
    let mut blocks = Vec::with_capacity(slots.len());
    for s in &slots {
        let bd = count_block(&s.plan, s.input_hw.0, s.input_hw.1)?;
        for (c, r) in &bd {
            charge(&mut categories, *c, *r);
        }
        let bn = matches!(s.plan.norm, Some(crate::ops::NormKind::BatchNorm));
        buffers += if bn { 2 * s.plan.in_channels as u64 } else { 0 };
        buffers += if s.plan.conv.is_some() { 2 * s.plan.mid_channels as u64 } else { 0 };
        blocks.push(BlockCost {
            name: s.name.clone(),
            stage: s.stage,
            input_hw: s.input_hw,
            output_hw: s.output_hw,
            total: total(&bd),
            categories: bd,
        });
    }
    charge(&mut categories, Category::Head, CostRecord::conv(&cfg.head_spec(), 1, 1));
    let totals = total(&categories);
    let fractions = categories
        .iter()
        .map(|(c, r)| {
            (*c, Fraction { params: r.params as f64 / totals.params as f64, macs: r.macs as f64 / totals.macs as f64 })
        })
        .collect();
    Ok(CostReport { model: cfg.name.clone(), resolution: (h, w), blocks, categories, totals, fractions, buffers })
}

impl CostReport {
    /// Aligned plain-text summary by category.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} at {}x{}", if self.model.is_empty() { "model" } else { &self.model }, self.resolution.0, self.resolution.1);
        let _ = writeln!(s, "{:<10} {:>12} {:>8} {:>14} {:>8} {:>14}", "category", "params", "%", "MACs", "%", "softmax");
        for c in Category::ALL {
            let r = self.categories.get(&c).copied().unwrap_or_default();
            let f = self.fractions.get(&c).copied().unwrap_or(Fraction { params: 0.0, macs: 0.0 });
            let _ = writeln!(
                s,
                "{:<10} {:>12} {:>7.2}% {:>14} {:>7.2}% {:>14}",
                c.name(),
                r.params,
                100.0 * f.params,
                r.macs,
                100.0 * f.macs,
                r.softmax_flops
            );
        }
        let t = self.totals;
        let _ = writeln!(s, "{:<10} {:>12} {:>8} {:>14} {:>8} {:>14}", "total", t.params, "", t.macs, "", t.softmax_flops);
        s
    }
}
