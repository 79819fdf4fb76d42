//! Pipeline configuration file (TOML). Every section is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{NetConfig, TrainConfig};
use crate::staple::{Prior, StapleOptions};

/// `"mean"` for the mean rater foreground fraction, or a fixed probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSetting {
    Named(String),
    Fixed(f64),
}

impl Default for PriorSetting {
    fn default() -> Self {
        PriorSetting::Named("mean".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StapleConfig {
    pub prior: PriorSetting,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for StapleConfig {
    fn default() -> Self {
        let d = StapleOptions::default();
        StapleConfig { prior: PriorSetting::default(), max_iters: d.max_iters, tol: d.tol }
    }
}

impl StapleConfig {
    pub fn options(&self) -> Result<StapleOptions> {
        let prior = match &self.prior {
            PriorSetting::Named(name) if name == "mean" => Prior::MeanFraction,
            PriorSetting::Named(name) => {
                return Err(Error::Config(format!("staple.prior must be \"mean\" or a number, got {name:?}")))
            }
            PriorSetting::Fixed(p) if *p > 0.0 && *p < 1.0 => Prior::Uniform(*p),
            PriorSetting::Fixed(p) => return Err(Error::Config(format!("staple.prior {p} must lie in (0, 1)"))),
        };
        if self.max_iters == 0 {
            return Err(Error::Config("staple.max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("staple.tol must be positive, got {}", self.tol)));
        }
        Ok(StapleOptions { prior, max_iters: self.max_iters, tol: self.tol })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Inference threshold on the predicted signed distance.
    pub tau: f64,
    pub loss: LossConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub staple: StapleConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            e => e,
        };
        if !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite, got {}", self.tau)));
        }
        self.loss.validate().map_err(wrap)?;
        self.net.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.staple.options()?;
        Ok(())
    }
}
