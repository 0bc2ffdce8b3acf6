//! Run configuration: one TOML file with a section per module. Every field
//! has a default, unknown keys are rejected, and the SHA-256 of the resolved
//! (defaults filled, flags applied) TOML identifies a run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserConfig;
use crate::error::{Result, RfdmError};
use crate::metrics::MetricsConfig;
use crate::sample::SamplerConfig;
use crate::schedule::NoiseSchedule;
use crate::synthvid::{GeneratorConfig, SplitRatios};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_clips: usize,
    pub seed: u64,
    pub split_ratios: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_clips: 2000,
            seed: 0,
            split_ratios: SplitRatios::default().0,
        }
    }
}

impl DataConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios(self.split_ratios)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: NoiseSchedule,
    pub generator: GeneratorConfig,
    pub data: DataConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_owned())
                .unwrap_or_else(|| "<file>".into());
            RfdmError::config(key, e.message().to_owned())
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RfdmError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Loads `path`, or the defaults when `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RfdmError::config("<serialize>", e.to_string()))
    }

    /// Hex SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.generator.validate()?;
        self.data.ratios().validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.metrics.validate()?;
        if self.train.ar_frames + 1 > self.generator.frames {
            return Err(RfdmError::config(
                "train.ar_frames",
                format!(
                    "chain of {} frames exceeds the clip length {}",
                    self.train.ar_frames + 1,
                    self.generator.frames
                ),
            ));
        }
        for (k, v) in [
            ("data.seed", self.data.seed),
            ("train.seed", self.train.seed),
            ("sampler.seed", self.sampler.seed),
            ("model.init_seed", self.model.init_seed),
        ] {
            if v > i64::MAX as u64 {
                return Err(RfdmError::config(k, "seeds must fit in a signed 64-bit integer"));
            }
        }
        Ok(())
    }

    /// Identity of a training run, stamped into checkpoints and checked on
    /// resume. Covers every section that shapes the trained parameters, but
    /// not the stopping point (`train.steps`, `train.checkpoint_every`) nor
    /// the sampler and metric settings.
    pub fn training_hash(&self) -> Result<String> {
        let mut key = RunConfig {
            sampler: SamplerConfig::default(),
            metrics: MetricsConfig::default(),
            ..self.clone()
        };
        key.train.steps = 0;
        key.train.checkpoint_every = 0;
        key.hash()
    }

    /// The model config the trainer actually builds.
    pub fn effective_model(&self) -> DenoiserConfig {
        DenoiserConfig {
            cond_x_only: self.train.cond_x_only,
            ..self.model.clone()
        }
    }
}
