//! Cosine similarity of channel vectors along the main diagonal of a
//! feature map, relative to the top-left pixel.

use serde::{Deserialize, Serialize};

use crate::emo::Model;
use crate::error::{config_err, Result};
use crate::exec::Eval;
use crate::init::Init;
use crate::irmb::IrmbConfig;
use crate::mmb::Block;
use crate::ops::{Activation, NormKind};
use crate::rng::Rng;
use crate::tensor::{Scalar, Shape, Tensor};

/// Cosine of two vectors; two zero vectors count as identical.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ if a == b => 1.0,
        _ => dot / (na * nb),
    }
}

fn pixel<T: Scalar>(x: &Tensor<T>, n: usize, y: usize, xx: usize) -> Vec<f64> {
    (0..x.shape().c).map(|c| x.at(n, c, y, xx).to_f64()).collect()
}

/// Similarities of pixels `(i, i)` to pixel `(0, 0)` for batch item `n`.
pub fn diagonal_similarity<T: Scalar>(features: &Tensor<T>, n: usize) -> Vec<f64> {
    let s = features.shape();
    let origin = pixel(features, n, 0, 0);
    (0..s.h.min(s.w)).map(|i| cosine(&origin, &pixel(features, n, i, i))).collect()
}

/// Diagonal similarity at a model stage output (0 is the stem, 1..=4 the
/// stages) for the first batch item.
pub fn diag_similarity<T: Scalar>(model: &Model<T>, stage: usize, x: &Tensor<T>) -> Result<Vec<f64>> {
    if stage > 4 {
        return config_err(format!("stage {stage} has no output (expected 0..=4)"));
    }
    let f = model.forward_features(&mut Eval::new(), x)?;
    let t = if stage == 0 { &f.stem } else { &f.stages[stage - 1] };
    Ok(diagonal_similarity(t, 0))
}

/// A stack of stride-1 iRMBs on a square random input, used to compare the
/// reach of conv-only blocks with attention-enabled ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageProbe {
    pub channels: usize,
    pub expansion_ratio: f64,
    pub depth: usize,
    pub map: usize,
    pub kernel: usize,
    pub window: Option<usize>,
    pub init: Init,
}

impl Default for StageProbe {
    fn default() -> Self {
        StageProbe { channels: 16, expansion_ratio: 2.0, depth: 2, map: 16, kernel: 3, window: None, init: Init::Default }
    }
}

impl StageProbe {
    /// Chebyshev reach of the conv path alone.
    pub fn conv_radius(&self) -> usize {
        self.depth * (self.kernel - 1) / 2
    }

    pub fn blocks(&self, attention: bool, seed: u64) -> Result<Vec<Block<f64>>> {
        let cfg = IrmbConfig {
            enable_attn: attention,
            window: self.window,
            kernel: self.kernel,
            attn_pre_expand: false,
            norm: Some(if attention { NormKind::LayerNorm } else { NormKind::BatchNorm }),
            act: Some(if attention { Activation::Gelu } else { Activation::Silu }),
            ..IrmbConfig::new(self.channels, self.channels, self.expansion_ratio)
        };
        (0..self.depth).map(|i| cfg.build(&format!("probe.{i}"), seed.wrapping_add(i as u64), self.init)).collect()
    }

    pub fn input(&self, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed).fork(0x51);
        Tensor::from_fn(Shape::new(1, self.channels, self.map, self.map), |_, _, _, _| rng.uniform(-1.0, 1.0))
    }

    pub fn similarity(&self, attention: bool, seed: u64) -> Result<Vec<f64>> {
        let mut x = self.input(seed);
        for b in self.blocks(attention, seed)? {
            x = b.run(&x)?;
        }
        Ok(diagonal_similarity(&x, 0))
    }
}

/// Mean of the entries at diagonal offsets strictly beyond `radius`.
pub fn mean_beyond(sims: &[f64], radius: usize) -> f64 {
    let tail = &sims[(radius + 1).min(sims.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityComparison {
    pub seed: u64,
    pub radius: usize,
    pub conv_only: f64,
    pub with_attention: f64,
}

impl SimilarityComparison {
    pub fn attention_higher(&self) -> bool {
        self.with_attention > self.conv_only
    }
}

/// Same seed, weights and input for both arms, differing only in the
/// attention switch.
pub fn compare_similarity(probe: &StageProbe, seed: u64) -> Result<SimilarityComparison> {
    let r = probe.conv_radius();
    Ok(SimilarityComparison {
        seed,
        radius: r,
        conv_only: mean_beyond(&probe.similarity(false, seed)?, r),
        with_attention: mean_beyond(&probe.similarity(true, seed)?, r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_entry_is_exactly_one() {
        let p = StageProbe { map: 8, channels: 8, ..StageProbe::default() };
        for attn in [false, true] {
            let s = p.similarity(attn, 3).unwrap();
            assert_eq!(s.len(), 8);
            assert_eq!(s[0], 1.0);
        }
        assert!((cosine(&[1.0, 2.0], &[-1.0, -2.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_conv_stage_is_flat_inside() {
        let p = StageProbe { map: 12, channels: 8, ..StageProbe::default() };
        let mut x = Tensor::<f64>::full(Shape::new(1, 8, 12, 12), 0.7);
        for b in p.blocks(false, 5).unwrap() {
            x = b.run(&x).unwrap();
        }
        // pixels farther than the conv reach from every border see only
        // constant input
        let r = p.conv_radius();
        let origin = pixel(&x, 0, r, r);
        for i in r..12 - r {
            assert!((cosine(&origin, &pixel(&x, 0, i, i)) - 1.0).abs() < 1e-12);
        }
    }
}
