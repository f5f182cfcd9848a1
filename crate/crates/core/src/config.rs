//! Run configuration document.
//!
//! Every section and field is optional; omitted values take their defaults and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{GridMapping, KernelParams};
use crate::engine::{Architecture, CnnBaselineSpec, UNetSpec};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::sim::{SamplerConfig, SimConfig, Simulator, DEFAULT_TRIPLE_LAYOUT_RADIUS_MM};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub unet: UNetSpec,
    pub cnn: CnnBaselineSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            unet: UNetSpec::default(),
            cnn: CnnBaselineSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, name: &str) -> Result<Architecture> {
        let arch = match name {
            "unet" => Architecture::Unet(self.unet.clone()),
            "cnn" => Architecture::Cnn(self.cnn.clone()),
            other => return Err(Error::Config(format!("unknown architecture {other:?}"))),
        };
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub sampler: SamplerConfig,
    pub kernel: KernelParams,
    pub grid: GridMapping,
    pub triple_layout_radius_mm: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            sampler: SamplerConfig::default(),
            kernel: KernelParams::default(),
            grid: GridMapping::default(),
            triple_layout_radius_mm: DEFAULT_TRIPLE_LAYOUT_RADIUS_MM,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator()?;
        self.model.unet.validate()?;
        self.model.cnn.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn simulator(&self) -> Result<Simulator> {
        let mut s = Simulator::new(self.sim, self.sampler, self.kernel, self.grid)?;
        s.triple_layout_radius_mm = self.triple_layout_radius_mm;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        let c = RunConfig::from_json(r#"{"train": {"batch_size": 4}, "model": {"unet": {"base_channels": 8}}}"#).unwrap();
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.lr, 3e-4);
        assert_eq!(c.model.unet.base_channels, 8);
        assert_eq!(c.model.unet.depth, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"learning_rate": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kernel": {"sigma": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"split_ratio": 1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sim": {"marker_disc_radius_px": 3.0}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
