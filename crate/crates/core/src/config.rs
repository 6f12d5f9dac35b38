use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};

/// Which input branches the model has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    AudioVisual,
    VisualOnly,
    AudioOnly,
}

impl Modality {
    pub fn uses_visual(self) -> bool {
        matches!(self, Modality::AudioVisual | Modality::VisualOnly)
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, Modality::AudioVisual | Modality::AudioOnly)
    }
}

/// Architecture dimensions of the captioning network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Modality,
    /// Visual timesteps `T_v`.
    pub t_v: usize,
    /// Audio timesteps `T_a`.
    pub t_a: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Output size of the learned projection applied to visual features.
    pub visual_proj_dim: usize,
    pub visual_hidden: usize,
    pub audio_hidden: usize,
    /// Word embedding size `D_s`.
    pub embed_dim: usize,
    /// Aligned feature size `D_c`.
    pub joint_dim: usize,
    /// Residual blocks per MM-CNN stack.
    pub blocks: usize,
    pub vocab_size: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
}

impl ModelConfig {
    /// Positions seen by the aggregation weights, `T_c`.
    pub fn t_c(&self) -> usize {
        self.visual_positions() + self.audio_positions()
    }

    pub fn visual_positions(&self) -> usize {
        if self.mode.uses_visual() {
            self.t_v
        } else {
            0
        }
    }

    pub fn audio_positions(&self) -> usize {
        if self.mode.uses_audio() {
            self.t_a
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut extents = vec![
            ("embed_dim", self.embed_dim),
            ("joint_dim", self.joint_dim),
            ("vocab_size", self.vocab_size),
        ];
        if self.mode.uses_visual() {
            extents.extend([
                ("t_v", self.t_v),
                ("visual_dim", self.visual_dim),
                ("visual_proj_dim", self.visual_proj_dim),
                ("visual_hidden", self.visual_hidden),
            ]);
        }
        if self.mode.uses_audio() {
            extents.extend([
                ("t_a", self.t_a),
                ("audio_dim", self.audio_dim),
                ("audio_hidden", self.audio_hidden),
            ]);
        }
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.t_c() < 2 {
            return Err(Error::Config(format!(
                "aggregation needs at least 2 positions, got {}",
                self.t_c()
            )));
        }
        if self.vocab_size <= crate::dataio::RESERVED {
            return Err(Error::Config("vocabulary has no content tokens".into()));
        }
        Ok(())
    }
}

/// Flat run configuration; every key has a default, so a JSON config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Modality,
    pub t_v: usize,
    pub t_a: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub visual_proj_dim: usize,
    pub visual_hidden: usize,
    pub audio_hidden: usize,
    pub embed_dim: usize,
    pub joint_dim: usize,
    pub blocks: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_decay: f32,
    pub decay_every: usize,
    pub max_epochs: usize,
    pub max_len: usize,
    pub min_freq: usize,
    pub clip_norm: f32,
    pub seed: u64,
    /// Split used for per-epoch validation and model selection.
    pub val_split: String,
    pub manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Modality::AudioVisual,
            t_v: 40,
            t_a: 20,
            visual_dim: 4096,
            audio_dim: 128,
            visual_proj_dim: 512,
            visual_hidden: 512,
            audio_hidden: 128,
            embed_dim: 512,
            joint_dim: 512,
            blocks: 10,
            batch_size: 96,
            lr: 5e-4,
            lr_decay: 0.5,
            decay_every: 10,
            max_epochs: 50,
            max_len: 30,
            min_freq: 2,
            clip_norm: 5.0,
            seed: 0,
            val_split: "val".into(),
            manifest: None,
            vocab: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
            ("max_epochs", self.max_epochs),
            ("min_freq", self.min_freq),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.max_len < 2 {
            return Err(Error::Config("`max_len` must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("`lr`, `lr_decay` and `clip_norm` must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            t_v: self.t_v,
            t_a: self.t_a,
            visual_dim: self.visual_dim,
            audio_dim: self.audio_dim,
            visual_proj_dim: self.visual_proj_dim,
            visual_hidden: self.visual_hidden,
            audio_hidden: self.audio_hidden,
            embed_dim: self.embed_dim,
            joint_dim: self.joint_dim,
            blocks: self.blocks,
            vocab_size,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_eps: DEFAULT_EPS,
        }
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.batch_size, 96);
        assert_eq!(c.lr, 5e-4);
        assert_eq!(c.blocks, 10);
        assert_eq!(c.max_epochs, 50);
        assert_eq!((c.visual_hidden, c.audio_hidden), (512, 128));
        assert_eq!((c.t_v, c.t_a), (40, 20));
    }

    #[test]
    fn step_decay_schedule() {
        let c = RunConfig::default();
        assert_eq!(c.lr_at(0), 5e-4);
        assert_eq!(c.lr_at(9), 5e-4);
        assert_eq!(c.lr_at(10), 2.5e-4);
        assert!((c.lr_at(25) - 1.25e-4).abs() < 1e-12);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"mode": "visual_only", "blocks": 2}"#).unwrap();
        assert_eq!(c.mode, Modality::VisualOnly);
        assert_eq!(c.blocks, 2);
        assert_eq!(c.batch_size, 96);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn single_modality_positions() {
        let mut m = RunConfig::default().model_config(10);
        assert_eq!(m.t_c(), 60);
        m.mode = Modality::VisualOnly;
        assert_eq!((m.t_c(), m.audio_positions()), (40, 0));
        m.mode = Modality::AudioOnly;
        assert_eq!((m.t_c(), m.visual_positions()), (20, 0));
        m.validate().unwrap();
        m.vocab_size = 4;
        assert!(m.validate().is_err());
    }
}
