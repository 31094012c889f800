use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{GuidanceConfig, LossWeights, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::motion::SEGMENT_FRAMES;

/// Training configuration, read from TOML.
///
/// Defaults are desk scale. The published run used batch 512 for 2000
/// epochs on two GPUs, which is out of reach on a CPU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset manifest, relative to the config file.
    pub manifest: PathBuf,
    /// Skeleton definition; the bundled 52-joint skeleton when absent.
    pub skeleton: Option<PathBuf>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Training window in frames.
    pub window: usize,
    pub diffusion_steps: usize,
    pub guidance: f64,
    pub p_uncond: f64,
    pub lambda_j: f64,
    pub lambda_v: f64,
    pub lambda_c: f64,
    pub seed: u64,
    /// Checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    pub model: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let g = GuidanceConfig::default();
        Self {
            manifest: PathBuf::from("manifest.tsv"),
            skeleton: None,
            lr: 1e-4,
            batch: 16,
            epochs: 100,
            max_steps: None,
            window: SEGMENT_FRAMES,
            diffusion_steps: DEFAULT_STEPS,
            guidance: g.w,
            p_uncond: g.p_uncond,
            lambda_j: w.lambda_j,
            lambda_v: w.lambda_v,
            lambda_c: w.lambda_c,
            seed: 0,
            checkpoint_every: 10,
            model: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&crate::error::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if let Some(s) = &cfg.skeleton {
            if s.is_relative() {
                cfg.skeleton = Some(base.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_j: self.lambda_j,
            lambda_v: self.lambda_v,
            lambda_c: self.lambda_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 || self.epochs == 0 || self.checkpoint_every == 0 {
            return bad("batch, epochs and checkpoint_every must be positive".into());
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive".into());
        }
        if self.diffusion_steps < 2 {
            return bad(format!("diffusion_steps must be at least 2, got {}", self.diffusion_steps));
        }
        if self.window < 2 || self.window > self.model.max_len {
            return bad(format!(
                "window {} must lie in [2, model.max_len = {}]",
                self.window, self.model.max_len
            ));
        }
        GuidanceConfig {
            w: self.guidance,
            p_uncond: self.p_uncond,
        }
        .validate()?;
        self.weights().validate()?;
        self.model.validate()
    }
}
