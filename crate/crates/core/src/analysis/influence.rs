//! Which input pixels can affect one output pixel of a block stack.
//!
//! The structural mode propagates a boolean mask backwards through the
//! operators of each block: a `k x k` depth-wise conv dilates it by
//! `(k - 1) / 2` in Chebyshev distance and windowed attention widens it to
//! every window it touches. Pointwise maps, norms and skips leave it as is.
//! The VJP mode differentiates the real stack with generic weights and
//! marks every input pixel with a nonzero gradient.

use serde::Serialize;

use crate::error::{config_err, shape_err, Error, Result};
use crate::init::Init;
use crate::irmb::WindowLayout;
use crate::mmb::{Block, BlockPlan};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InfluenceMask {
    pub source: (usize, usize),
    pub height: usize,
    pub width: usize,
    /// Row-major `height x width`.
    pub mask: Vec<bool>,
    pub blocks_applied: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InfluenceMode {
    Structural,
    Vjp { seed: u64 },
}

impl InfluenceMask {
    pub fn source_only(height: usize, width: usize, source: (usize, usize)) -> Result<Self> {
        if source.0 >= height || source.1 >= width {
            return shape_err(format!("source {source:?} outside {height}x{width} map"));
        }
        let mut mask = vec![false; height * width];
        mask[source.0 * width + source.1] = true;
        Ok(InfluenceMask { source, height, width, mask, blocks_applied: 0 })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Largest Chebyshev distance from the source to a marked pixel.
    pub fn chebyshev_radius(&self) -> usize {
        let (sy, sx) = self.source;
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .filter(|&(y, x)| self.contains(y, x))
            .map(|(y, x)| y.abs_diff(sy).max(x.abs_diff(sx)))
            .max()
            .unwrap_or(0)
    }

    /// Whether `other` marks a superset of this mask's pixels.
    pub fn is_subset_of(&self, other: &InfluenceMask) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }

    fn dilate(&mut self, radius: usize) {
        let (h, w) = (self.height, self.width);
        let old = self.mask.clone();
        for y in 0..h {
            for x in 0..w {
                if !old[y * w + x] {
                    continue;
                }
                for yy in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                    for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                        self.mask[yy * w + xx] = true;
                    }
                }
            }
        }
    }

    fn close_windows(&mut self, window: Option<usize>) -> Result<()> {
        let layout = WindowLayout::new(self.height, self.width, window.unwrap_or(usize::MAX))?;
        let mut hit = vec![false; layout.num_windows()];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.contains(y, x) {
                    hit[layout.window_of(y, x)] = true;
                }
            }
        }
        for (win, _) in hit.iter().enumerate().filter(|(_, h)| **h) {
            for (y, x) in layout.valid_pixels(win) {
                self.mask[y * self.width + x] = true;
            }
        }
        Ok(())
    }

    /// Propagates backwards through one more block, in place.
    pub fn step(&mut self, plan: &BlockPlan) -> Result<()> {
        if plan.stride != 1 {
            return Err(Error::Unsupported("influence masks are defined for stride-1 stacks".into()));
        }
        let conv = plan.conv.map(|c| (c.kernel - 1) / 2);
        let window = plan.attention.map(|a| a.window);
        // reverse of the forward operator order
        if plan.attn_first {
            if let Some(r) = conv {
                self.dilate(r);
            }
            if let Some(w) = window {
                self.close_windows(w)?;
            }
        } else {
            if let Some(w) = window {
                self.close_windows(w)?;
            }
            if let Some(r) = conv {
                self.dilate(r);
            }
        }
        self.blocks_applied += 1;
        Ok(())
    }
}

fn check_stack(plans: &[BlockPlan]) -> Result<()> {
    if plans.is_empty() {
        return config_err("influence needs at least one block");
    }
    for pair in plans.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return config_err("consecutive blocks disagree on channel width");
        }
    }
    Ok(())
}

pub fn influence_mask(
    plans: &[BlockPlan],
    height: usize,
    width: usize,
    source: (usize, usize),
    mode: InfluenceMode,
) -> Result<InfluenceMask> {
    check_stack(plans)?;
    let mut m = InfluenceMask::source_only(height, width, source)?;
    match mode {
        InfluenceMode::Structural => {
            for p in plans.iter().rev() {
                m.step(p)?;
            }
            Ok(m)
        }
        InfluenceMode::Vjp { seed } => {
            if plans.iter().any(|p| p.stride != 1) {
                return Err(Error::Unsupported("influence masks are defined for stride-1 stacks".into()));
            }
            let blocks = plans
                .iter()
                .enumerate()
                .map(|(i, p)| Block::<f64>::new(format!("blocks.{i}"), *p, seed, Init::Generic))
                .collect::<Result<Vec<_>>>()?;
            let mut rng = Rng::new(seed).fork(0x1f1);
            let cin = plans[0].in_channels;
            let x = Tensor::<f64>::from_fn(Shape::new(1, cin, height, width), |_, _, _, _| rng.normal());
            let mut tape = Tape::new();
            let mut cur = tape.input(x);
            for b in &blocks {
                cur = b.forward(&mut tape, &cur)?;
            }
            let out_shape = tape.shape(&cur);
            let mut g = Tensor::<f64>::zeros(out_shape);
            for c in 0..out_shape.c {
                g.set(0, c, source.0, source.1, rng.normal());
            }
            let grads = tape.backward(cur, &g)?;
            let gx = &grads.inputs[0];
            for y in 0..height {
                for xx in 0..width {
                    m.mask[y * width + xx] = (0..cin).any(|c| gx.at(0, c, y, xx) != 0.0);
                }
            }
            m.blocks_applied = plans.len();
            Ok(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irmb::IrmbConfig;

    fn plan(attn: bool, conv: bool, window: Option<usize>, kernel: usize) -> BlockPlan {
        IrmbConfig { enable_attn: attn, enable_conv: conv, window, kernel, heads: Some(1), ..IrmbConfig::new(4, 4, 2.0) }
            .plan()
            .unwrap()
    }

    #[test]
    fn two_convs_give_five_by_five_ball() {
        let p = plan(false, true, None, 3);
        let m = influence_mask(&[p, p], 9, 9, (4, 4), InfluenceMode::Structural).unwrap();
        assert_eq!(m.count(), 25);
        assert_eq!(m.chebyshev_radius(), 2);
        assert!(m.contains(2, 6) && !m.contains(1, 4));
    }

    #[test]
    fn global_attention_covers_map() {
        let m = influence_mask(&[plan(true, true, None, 3)], 6, 6, (0, 0), InfluenceMode::Structural).unwrap();
        assert_eq!(m.count(), 36);
    }

    #[test]
    fn windowed_attention_stays_in_its_window() {
        let p = plan(true, false, Some(2), 3);
        let m = influence_mask(&[p; 5], 8, 8, (3, 2), InfluenceMode::Structural).unwrap();
        let expect: Vec<_> = [(2, 2), (2, 3), (3, 2), (3, 3)].into();
        assert_eq!(m.count(), 4);
        assert!(expect.iter().all(|&(y, x)| m.contains(y, x)));
    }

    #[test]
    fn vjp_mode_agrees_with_structure() {
        let stacks: Vec<Vec<BlockPlan>> = vec![
            vec![plan(false, true, None, 3); 2],
            vec![plan(true, false, Some(2), 3); 2],
            vec![plan(true, true, Some(3), 3), plan(true, true, Some(3), 5)],
            vec![IrmbConfig { attn_first: false, window: Some(2), heads: Some(1), ..IrmbConfig::new(4, 4, 2.0) }
                .plan()
                .unwrap()],
        ];
        for stack in stacks {
            for src in [(0, 0), (3, 4), (6, 6)] {
                let a = influence_mask(&stack, 7, 7, src, InfluenceMode::Structural).unwrap();
                let b = influence_mask(&stack, 7, 7, src, InfluenceMode::Vjp { seed: 11 }).unwrap();
                assert_eq!(a.mask, b.mask, "src {src:?}");
            }
        }
    }

    #[test]
    fn rejects_strided_blocks() {
        let p = BlockPlan { stride: 2, residual: false, ..plan(false, true, None, 3) };
        assert!(influence_mask(&[p], 8, 8, (0, 0), InfluenceMode::Structural).is_err());
        assert!(InfluenceMask::source_only(4, 4, (4, 0)).is_err());
    }
}
