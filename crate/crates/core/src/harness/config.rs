use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::fusion::FusionConfig;
use crate::nn::BackboneConfig;
use crate::optim::OptimizerConfig;
use crate::synth::SceneRecipe;

/// Everything one training run needs. Loaded from TOML; every field has a
/// desk-scale default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: SceneRecipe,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Read scenes from a corpus directory instead of generating them.
    pub corpus: Option<PathBuf>,
    /// Confidence-filter window; 1 disables filtering.
    pub filter_window: usize,
    /// Overrides channel attention on every semantic stage.
    pub cham: Option<bool>,
    /// Keep this many labels and merge the rest into one channel.
    pub vocabulary: Option<usize>,
    /// Explicit branch architectures; derived from the desk presets when absent.
    pub semantic: Option<BackboneConfig>,
    pub rgb: Option<BackboneConfig>,
    pub fusion: FusionConfig,
    pub optimizer: OptimizerConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    /// Side of the square evaluation crops.
    pub crop: usize,
    pub ten_crop: bool,
    pub seed: u64,
    pub outdir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            recipe: SceneRecipe::default(),
            train_scenes: 512,
            test_scenes: 256,
            corpus: None,
            filter_window: 2,
            cham: None,
            vocabulary: None,
            semantic: None,
            rgb: None,
            fusion: FusionConfig::default(),
            optimizer: OptimizerConfig::default(),
            stage1_epochs: 30,
            stage2_epochs: 12,
            batch_size: 16,
            crop: 28,
            ten_crop: true,
            seed: 0,
            outdir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML configuration.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn filter(&self) -> Result<FilterConfig> {
        FilterConfig::new(self.filter_window)
    }

    /// Score-tensor channels after any vocabulary restriction.
    pub fn score_channels(&self) -> usize {
        match self.vocabulary {
            Some(k) if k < self.recipe.labels => k + 1,
            _ => self.recipe.labels,
        }
    }

    pub fn semantic_config(&self) -> Result<BackboneConfig> {
        let mut c = match &self.semantic {
            Some(c) => c.clone(),
            None => BackboneConfig::desk_semantic(self.score_channels(), self.filter_window)?,
        };
        if let Some(on) = self.cham {
            c = c.with_cham(on);
        }
        if c.input_channels != self.score_channels() {
            return Err(Error::Config(format!(
                "semantic branch expects {} channels but scores carry {}",
                c.input_channels,
                self.score_channels()
            )));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn rgb_config(&self) -> Result<BackboneConfig> {
        let c = self.rgb.clone().unwrap_or_else(BackboneConfig::desk_rgb);
        if c.input_channels != 3 {
            return Err(Error::Config("rgb branch must take 3 channels".into()));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        self.fusion.validate()?;
        self.optimizer.validate()?;
        self.filter()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.corpus.is_none() && self.train_scenes == 0 {
            return Err(Error::Config("no training scenes".into()));
        }
        if let Some(k) = self.vocabulary {
            if k == 0 || k > self.recipe.labels {
                return Err(Error::Config(format!(
                    "vocabulary {k} outside 1..={}",
                    self.recipe.labels
                )));
            }
        }
        let (s, r) = (self.semantic_config()?, self.rgb_config()?);
        if s.output_dim() != r.output_dim() {
            return Err(Error::Config(format!(
                "branch feature lengths differ: semantic {}, rgb {}",
                s.output_dim(),
                r.output_dim()
            )));
        }
        if self.crop == 0 || self.crop > self.recipe.width || self.crop > self.recipe.height {
            return Err(Error::Config(format!(
                "crop {} does not fit {}x{} scenes",
                self.crop, self.recipe.width, self.recipe.height
            )));
        }
        if self.crop < self.filter_window {
            return Err(Error::Config("crop smaller than the filter window".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 7\nfilter_window = 4\n[recipe]\ncorruption_rate = 0.2\n[fusion]\nkind = \"concat\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.recipe.corruption_rate, 0.2);
        assert_eq!(c.recipe.labels, 12);
        assert_eq!(c.semantic_config().unwrap().stage_strides, vec![2, 1, 1]);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn vocabulary_changes_channels() {
        let c = ExperimentConfig {
            vocabulary: Some(6),
            ..ExperimentConfig::default()
        };
        assert_eq!(c.score_channels(), 7);
        assert_eq!(c.semantic_config().unwrap().input_channels, 7);
        let bad = ExperimentConfig {
            crop: 40,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
