//! The run configuration: one JSON document plus dotted-path overrides.

use std::path::{Path, PathBuf};

use ripnerf_core::data::ToySpec;
use ripnerf_core::field::FieldConfig;
use ripnerf_core::render::RenderConfig;
use ripnerf_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Blender-convention dataset directory; the toy scene is generated
    /// when absent.
    pub dir: Option<PathBuf>,
    /// Downsampling factors for multi-scale training and evaluation.
    pub scales: Vec<u32>,
    pub toy: ToySpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dir: None, scales: vec![1], toy: ToySpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Write `ckpt_<iteration>.ripf` every this many iterations (0: only the
    /// final checkpoint).
    pub checkpoint_every: u64,
    /// Validation PSNR cadence (0: never).
    pub eval_every: u64,
    /// Cap on validation views per evaluation (0: all).
    pub eval_views: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { checkpoint_every: 0, eval_every: 0, eval_views: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            render: RenderConfig::default(),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        self.field.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.data.scales.is_empty() || self.data.scales.iter().any(|&s| s == 0 || !s.is_power_of_two()) {
            return Err(CliError::Usage("data.scales must be a nonempty list of powers of two".into()));
        }
        if self.render.steps == 0 || self.render.max_samples == 0 {
            return Err(CliError::Usage("render.steps and render.max_samples must be positive".into()));
        }
        Ok(())
    }

    /// Apply `key=value` overrides. Keys are dotted paths into the JSON
    /// document and must already exist; values are parsed as JSON, falling
    /// back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = serde_json::to_value(self).expect("serializable");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| CliError::Usage(format!("override `{item}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let unknown = || CliError::Usage(format!("unknown config key `{key}`"));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(unknown)?;
        let slot = obj.get_mut(*part).ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(unknown())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"field": {"grid": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::default().with_overrides(&["train.nope=1".into()]).is_err());
        assert!(RunConfig::from_json(r#"{"version": 9}"#).is_err());
    }

    #[test]
    fn overrides_apply_by_path() {
        let cfg = RunConfig::default()
            .with_overrides(&[
                "train.iterations=5".into(),
                "field.solid=\"cube\"".into(),
                "field.encoding_mode=isotropic_mipmap".into(),
                "data.dir=/tmp/x".into(),
                "data.scales=[1,2]".into(),
            ])
            .unwrap();
        assert_eq!(cfg.train.iterations, 5);
        assert_eq!(cfg.field.solid.plane_count(), 3);
        assert_eq!(cfg.data.dir, Some(PathBuf::from("/tmp/x")));
        assert_eq!(cfg.data.scales, vec![1, 2]);
        assert!(RunConfig::default().with_overrides(&["data.scales=[3]".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["train.iterations".into()]).is_err());
    }
}
