//! Global configuration file.
//!
//! ```toml
//! seed = 0
//! stage = "multi_layer"
//!
//! [losses]      # loss weights, see LossWeights
//! [fit]         # gradient-descent fitting
//! [collision]   # clearance and refinement
//! [raster]      # rasterizer constants
//! [gradcheck]   # finite-difference audit
//! ```
//!
//! Every key is optional; missing keys take their defaults and unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collision::CollisionConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Stage};
use crate::pipeline::{FitConfig, TransferConfig};
use crate::render::RasterConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub step: f64,
    pub iterations: usize,
    pub tolerance: f64,
    pub epsilon: f64,
    pub max_halvings: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            step: d.step,
            iterations: d.iterations,
            tolerance: d.tolerance,
            epsilon: d.epsilon,
            max_halvings: d.max_halvings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: usize,
    pub max_gaussians: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 20,
            max_gaussians: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub stage: Stage,
    pub losses: LossWeights,
    pub fit: FitSection,
    pub collision: CollisionConfig,
    pub raster: RasterConfig,
    pub gradcheck: GradcheckSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            stage: Stage::MultiLayer,
            losses: LossWeights::default(),
            fit: FitSection::default(),
            collision: CollisionConfig::default(),
            raster: RasterConfig::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Text(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Text(m) => Error::Text(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.fit_config().validate()?;
        self.collision.validate()?;
        self.raster.validate()
    }

    /// Fitting settings with the `[losses]` weights.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            step: self.fit.step,
            iterations: self.fit.iterations,
            tolerance: self.fit.tolerance,
            epsilon: self.fit.epsilon,
            max_halvings: self.fit.max_halvings,
            weights: self.losses,
        }
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            collision: self.collision,
            raster: self.raster,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(Config::from_toml("").unwrap(), c);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = Config::from_toml("seed = 9\n[collision]\nalpha = 1.0\n[losses]\ncoll = 100.0\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.collision.alpha, 1.0);
        assert_eq!(c.collision.epsilon, CollisionConfig::default().epsilon);
        assert_eq!(c.fit_config().weights.coll, 100.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(Config::from_toml("[collision]\nalpa = 1.0\n").is_err());
        assert!(Config::from_toml("[fit]\nstep = -1.0\n").is_err());
        assert!(Config::from_toml("[losses]\nedge = -0.1\n").is_err());
    }
}
