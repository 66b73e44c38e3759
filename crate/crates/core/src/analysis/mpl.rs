//! Maximum path length: how many identical stride-1 blocks it takes for a
//! corner pixel to influence the opposite corner of a `W x W` map.

use serde::Serialize;

use crate::analysis::influence::InfluenceMask;
use crate::error::{config_err, Result};
use crate::irmb::IrmbConfig;
use crate::mmb::BlockPlan;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MplReport {
    pub map: usize,
    pub kernel: Option<usize>,
    /// Window side as applied (clipped to the map); `None` without attention.
    pub window: Option<usize>,
    /// `None` if the opposite corner is never reached.
    pub empirical: Option<usize>,
    /// Order-of-growth label for the block type.
    pub order: &'static str,
    /// `ceil(2W / (k - 1 + 2w))` for the cascade, `ceil(2W / (k - 1))` for
    /// conv only.
    pub closed_form: Option<u64>,
}

/// Plan for a probe block with the given operators.
pub fn probe_plan(kernel: usize, window: Option<usize>, attn: bool, conv: bool) -> Result<BlockPlan> {
    IrmbConfig { enable_attn: attn, enable_conv: conv, kernel, window, heads: Some(1), ..IrmbConfig::new(4, 4, 1.0) }
        .plan()
}

/// Corner-to-corner count under pure Chebyshev growth: `ceil((W - 1) / r)`
/// with `r = (k - 1) / 2`.
pub fn conv_corner_count(map: usize, kernel: usize) -> usize {
    (map - 1).div_ceil((kernel - 1) / 2)
}

pub fn cascade_ceiling(map: usize, kernel: usize, window: usize) -> u64 {
    (2 * map as u64).div_ceil((kernel - 1 + 2 * window) as u64)
}

pub fn conv_ceiling(map: usize, kernel: usize) -> u64 {
    (2 * map as u64).div_ceil((kernel - 1) as u64)
}

/// Blocks until the mask from `source` reaches `target`, or `None` once the
/// mask stops growing.
fn blocks_to_reach(plan: &BlockPlan, map: usize, source: (usize, usize), target: (usize, usize)) -> Result<Option<usize>> {
    let mut m = InfluenceMask::source_only(map, map, source)?;
    loop {
        if m.contains(target.0, target.1) {
            return Ok(Some(m.blocks_applied));
        }
        let before = m.count();
        m.step(plan)?;
        if m.count() == before && !m.contains(target.0, target.1) {
            return Ok(None);
        }
    }
}

/// Worst case over the four corner-to-opposite-corner pairs.
pub fn max_path_length(plan: &BlockPlan, map: usize) -> Result<MplReport> {
    if map < 2 {
        return config_err("path length needs a map of side >= 2");
    }
    let e = map - 1;
    let pairs = [((0, 0), (e, e)), ((e, e), (0, 0)), ((0, e), (e, 0)), ((e, 0), (0, e))];
    let mut worst = Some(0);
    for (s, t) in pairs {
        worst = match (worst, blocks_to_reach(plan, map, s, t)?) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
    }
    let kernel = plan.conv.map(|c| c.kernel);
    let window = plan.attention.map(|a| a.window.unwrap_or(map).min(map));
    let (order, closed_form) = match (kernel, window) {
        (Some(k), Some(w)) => ("O(2W/(k-1+2w))", Some(cascade_ceiling(map, k, w))),
        (Some(k), None) if k > 1 => ("O(2W/(k-1))", Some(conv_ceiling(map, k))),
        (None, Some(w)) if w >= map => ("O(1)", Some(1)),
        (None, Some(_)) => ("O(Inf)", None),
        _ => ("O(Inf)", None),
    };
    Ok(MplReport { map, kernel, window, empirical: worst, order, closed_form })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_only_grows_one_pixel_per_block() {
        let r = max_path_length(&probe_plan(3, None, false, true).unwrap(), 8).unwrap();
        assert_eq!(r.empirical, Some(7));
        assert_eq!(r.closed_form, Some(8));
        assert_eq!(conv_corner_count(8, 3), 7);
    }

    #[test]
    fn global_window_is_one_hop() {
        let r = max_path_length(&probe_plan(3, None, true, true).unwrap(), 8).unwrap();
        assert_eq!(r.empirical, Some(1));
    }

    #[test]
    fn windowed_attention_alone_never_crosses() {
        let r = max_path_length(&probe_plan(3, Some(2), true, false).unwrap(), 8).unwrap();
        assert_eq!((r.empirical, r.order), (None, "O(Inf)"));
    }

    #[test]
    fn aligned_cascade_count() {
        // independent 1-D propagation: a block grows the reach by (k-1)/2 and
        // then rounds up to the next window edge, so the first block only
        // gains 1 and later blocks gain w; the far corner 7 needs four blocks
        let r = max_path_length(&probe_plan(3, Some(2), true, true).unwrap(), 8).unwrap();
        assert_eq!(r.empirical, Some(4));
        assert_eq!(r.closed_form, Some(3));
    }
}
