//! Closed-form module costs with `L = W^2` tokens and `l = w^2` per window.
//!
//! FLOPs here carry the factor 2 of a multiply-add, so `flops / 2` is the
//! MAC-equivalent that [`super::cost`] reports (its softmax term stays in
//! flops).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModuleKind {
    #[serde(rename = "mhsa")]
    Mhsa,
    #[serde(rename = "w-mhsa")]
    WMhsa,
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "dw-conv")]
    DwConv,
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mhsa" => Ok(ModuleKind::Mhsa),
            "w-mhsa" => Ok(ModuleKind::WMhsa),
            "conv" => Ok(ModuleKind::Conv),
            "dw-conv" => Ok(ModuleKind::DwConv),
            other => config_err(format!("unknown module `{other}` (expected mhsa, w-mhsa, conv or dw-conv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaArgs {
    pub channels: u64,
    /// Feature map side `W`.
    pub map: u64,
    /// Window side `w`.
    pub window: u64,
    pub kernel: u64,
    pub groups: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormulaCosts {
    pub module: ModuleKind,
    pub params: u64,
    pub flops: u64,
    /// `flops / 2`.
    pub mac_equivalent: f64,
    pub mpl: &'static str,
}

pub fn formula_costs(kind: ModuleKind, a: FormulaArgs) -> Result<FormulaCosts> {
    let FormulaArgs { channels: c, map, window, kernel: k, groups: g } = a;
    if c == 0 || map == 0 || window == 0 || k == 0 || g == 0 {
        return config_err("formula arguments must be positive");
    }
    let l_map = map * map;
    let l_win = window * window;
    let (params, flops, mpl) = match kind {
        ModuleKind::Mhsa => (4 * (c + 1) * c, 8 * c * c * l_map + 4 * c * l_map * l_map + 3 * l_map * l_map, "O(1)"),
        ModuleKind::WMhsa => (4 * (c + 1) * c, 8 * c * c * l_map + 4 * c * l_map * l_win + 3 * l_map * l_win, "O(Inf)"),
        ModuleKind::Conv => {
            if c % g != 0 {
                return config_err(format!("groups {g} must divide channels {c}"));
            }
            ((c * k * k / g + 1) * c, (2 * c * k * k / g) * l_map * c, "O(2W/(k-1))")
        }
        ModuleKind::DwConv => ((k * k + 1) * c, 2 * k * k * l_map * c, "O(2W/(k-1))"),
    };
    Ok(FormulaCosts { module: kind, params, flops, mac_equivalent: flops as f64 / 2.0, mpl })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(c: u64, map: u64, window: u64, k: u64) -> FormulaArgs {
        FormulaArgs { channels: c, map, window, kernel: k, groups: 1 }
    }

    #[test]
    fn hand_evaluated_rows() {
        let m = formula_costs(ModuleKind::Mhsa, args(8, 4, 4, 3)).unwrap();
        assert_eq!((m.params, m.flops), (288, 17152));
        let d = formula_costs(ModuleKind::DwConv, args(8, 4, 4, 3)).unwrap();
        assert_eq!((d.params, d.flops), (80, 2304));
        let c = formula_costs(ModuleKind::Conv, args(4, 8, 8, 3)).unwrap();
        assert_eq!(c.flops, 18432);
    }

    #[test]
    fn full_window_equals_global() {
        for (c, w) in [(4, 4), (16, 8)] {
            let a = formula_costs(ModuleKind::Mhsa, args(c, w, w, 3)).unwrap();
            let b = formula_costs(ModuleKind::WMhsa, args(c, w, w, 3)).unwrap();
            assert_eq!((a.params, a.flops), (b.params, b.flops));
        }
        assert_eq!(formula_costs(ModuleKind::WMhsa, args(4, 8, 2, 3)).unwrap().mpl, "O(Inf)");
        assert!("mlp".parse::<ModuleKind>().is_err());
    }
}
