use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::{FocalConfig, LossId, SrLossConfig};
use crate::model::ModelConfig;

/// Everything a training run depends on. Read from TOML; every key is optional.
///
/// ```toml
/// loss = "sr"
/// steps = 4000
/// batch_size = 8
/// learning_rate = 1e-4
/// seed = 7
/// eval_every = 100
/// checkpoint_every = 500
/// manifest = "data/manifest.csv"
/// output_dir = "runs/sr"
///
/// [augmentation]
/// out_size = 320
///
/// [model]
/// encoder_variant = "resnet34"
///
/// [sr]
/// alpha = 0.5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossId,
    /// Defaults to 4000 for the SR loss and 8000 otherwise.
    pub steps: Option<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub augmentation: AugmentationConfig,
    pub model: ModelConfig,
    pub sr: SrLossConfig,
    pub focal: FocalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            loss: LossId::Dice,
            steps: None,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 500,
            manifest: None,
            output_dir: PathBuf::from("runs/default"),
            augmentation: AugmentationConfig::default(),
            model: ModelConfig::default(),
            sr: SrLossConfig::default(),
            focal: FocalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a run file; a relative `manifest` or `output_dir` is resolved against
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(base.join(m));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config is always representable")
    }

    pub fn steps(&self) -> u64 {
        self.steps.unwrap_or(match self.loss {
            LossId::Sr => 4000,
            _ => 8000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.steps();
        if steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.eval_every == 0 || self.eval_every > steps {
            return Err(Error::Config(format!(
                "eval_every must lie in 1..={steps}, got {}",
                self.eval_every
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        self.augmentation.validate()?;
        self.model.validate()?;
        self.sr.validate()?;
        let d = self.model.divisor();
        if !self.augmentation.out_size.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "out_size {} is not divisible by 2^encoder_depth = {d}",
                self.augmentation.out_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_defaults_follow_loss() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.steps(), 8000);
        cfg.loss = LossId::Sr;
        assert_eq!(cfg.steps(), 4000);
        cfg.steps = Some(12);
        assert_eq!(cfg.steps(), 12);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig::from_toml(
            "loss = \"logdice\"\nseed = 3\n[augmentation]\nout_size = 64\n[sr]\nalpha = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.loss, LossId::LogDice);
        assert_eq!(cfg.augmentation.out_size, 64);
        assert_eq!(cfg.augmentation.rotate_limit, 45.0);
        assert_eq!(cfg.sr.alpha, 0.25);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::from_toml("loss = \"l2\""), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("stepz = 3").is_err());
        let cfg = RunConfig {
            steps: Some(10),
            eval_every: 20,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
