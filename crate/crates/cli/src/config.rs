//! Run configuration: an optional strict JSON file, overridden by flags.

use std::path::{Path, PathBuf};

use emo_core::analysis::StageProbe;
use emo_core::{EmoVariantConfig, IrmbConfig, Precision, Variant};
use serde::Deserialize;

use crate::error::ConfigError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub version: Option<u32>,
    pub preset: Option<Variant>,
    /// Inline variant; exclusive with `preset`.
    pub model: Option<EmoVariantConfig>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub resolution: Option<usize>,
    /// `noise`, `zero`, `constant:<value>` or `file:<path>`.
    pub input: Option<String>,
    /// Block under test for `equiv`, `influence` and `mpl`.
    pub block: Option<IrmbConfig>,
    pub probe: Option<StageProbe>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(v) = cfg.version {
            if v != CONFIG_VERSION {
                return Err(ConfigError(format!("config version {v} is not supported (expected {CONFIG_VERSION})")));
            }
        }
        if cfg.preset.is_some() && cfg.model.is_some() {
            return Err(ConfigError("`preset` and `model` are mutually exclusive".into()));
        }
        Ok(cfg)
    }

    /// Variant from `--preset` or the file, with the resolution applied.
    pub fn variant(&self, preset: Option<Variant>) -> Result<EmoVariantConfig, ConfigError> {
        let mut cfg = match (preset.or(self.preset), &self.model) {
            (Some(p), None) => p.config(),
            (None, Some(m)) => m.clone(),
            (Some(_), Some(_)) => return Err(ConfigError("`preset` and `model` are mutually exclusive".into())),
            (None, None) => return Err(ConfigError("this command needs --preset or a config with `preset` or `model`".into())),
        };
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        Ok(cfg)
    }

    pub fn has_model(&self, preset: Option<Variant>) -> bool {
        preset.is_some() || self.preset.is_some() || self.model.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    Noise,
    Constant(f64),
    File(PathBuf),
}

impl InputSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "noise" => Ok(InputSpec::Noise),
            "zero" => Ok(InputSpec::Constant(0.0)),
            _ => {
                if let Some(v) = s.strip_prefix("constant:") {
                    let v: f64 = v.parse().map_err(|_| ConfigError(format!("bad constant in input `{s}`")))?;
                    return Ok(InputSpec::Constant(v));
                }
                if let Some(p) = s.strip_prefix("file:") {
                    return Ok(InputSpec::File(PathBuf::from(p)));
                }
                Err(ConfigError(format!("unknown input `{s}` (expected noise, zero, constant:<v> or file:<path>)")))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InputSpec::Noise => "noise".into(),
            InputSpec::Constant(v) => format!("constant:{v}"),
            InputSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"preset": "emo-1m", "sede": 3}"#).unwrap_err();
        assert!(err.to_string().contains("sede"));
        let ok: RunConfig = serde_json::from_str(r#"{"preset": "emo-1m", "seed": 3}"#).unwrap();
        assert_eq!(ok.variant(None).unwrap().depths, [2, 2, 8, 3]);
    }

    #[test]
    fn preset_and_model_conflict() {
        let model = serde_json::to_string(&Variant::Emo2M.config()).unwrap();
        let cfg: RunConfig = serde_json::from_str(&format!(r#"{{"model": {model}}}"#)).unwrap();
        assert!(cfg.variant(Some(Variant::Emo1M)).is_err());
        assert_eq!(cfg.variant(None).unwrap().dims, [32, 48, 120, 200]);
    }

    #[test]
    fn input_grammar() {
        assert_eq!(InputSpec::parse("zero").unwrap(), InputSpec::Constant(0.0));
        assert_eq!(InputSpec::parse("constant:0.5").unwrap(), InputSpec::Constant(0.5));
        assert!(InputSpec::parse("jpeg").is_err());
    }
}
