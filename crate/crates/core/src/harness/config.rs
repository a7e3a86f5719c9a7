use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthKind;
use crate::error::{Error, Result};
use crate::geometry::{check_ratio, GridShape, Strategy};
use crate::model::{Aggregation, Mode, ModelConfig};
use crate::training::{AdamW, DeviationOptions, TrainOptions};

/// Flat, strictly parsed run configuration.
///
/// Every key is optional; missing keys take the toy defaults below and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridShape,
    pub patch_size: usize,
    pub in_channels: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: f64,
    pub kernel_size: usize,
    pub aggregation: Aggregation,
    pub norm_pix: bool,
    pub mode: Mode,
    pub rho_e: f64,
    pub rho_d: f64,
    pub sampling: Strategy,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Synthetic image family used for training and deviation batches.
    pub data: SynthKind,
    /// Size of the fixed synthetic image pool.
    pub n_images: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_model(&ModelConfig::toy())
    }
}

impl RunConfig {
    /// Run configuration around `model` with the default schedule.
    pub fn from_model(model: &ModelConfig) -> Self {
        let optim = AdamW::default();
        let train = TrainOptions::default();
        RunConfig {
            grid: model.grid,
            patch_size: model.patch_size,
            in_channels: model.in_channels,
            enc_dim: model.enc_dim,
            enc_depth: model.enc_depth,
            enc_heads: model.enc_heads,
            dec_dim: model.dec_dim,
            dec_depth: model.dec_depth,
            dec_heads: model.dec_heads,
            mlp_ratio: model.mlp_ratio,
            kernel_size: model.kernel_size,
            aggregation: model.aggregation,
            norm_pix: model.norm_pix,
            mode: model.mode,
            rho_e: train.rho_e,
            rho_d: train.rho_d,
            sampling: train.strategy,
            seed: 0,
            lr: optim.lr,
            beta1: optim.beta1,
            beta2: optim.beta2,
            eps: optim.eps,
            weight_decay: optim.weight_decay,
            warmup_fraction: train.warmup_fraction,
            batch_size: train.batch_size,
            steps: train.steps,
            data: SynthKind::GaussianBlobs,
            n_images: 32,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            grid: self.grid,
            patch_size: self.patch_size,
            in_channels: self.in_channels,
            enc_dim: self.enc_dim,
            enc_depth: self.enc_depth,
            enc_heads: self.enc_heads,
            dec_dim: self.dec_dim,
            dec_depth: self.dec_depth,
            dec_heads: self.dec_heads,
            mlp_ratio: self.mlp_ratio,
            kernel_size: self.kernel_size,
            aggregation: self.aggregation,
            norm_pix: self.norm_pix,
            mode: self.mode,
        }
    }

    pub fn optim(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            rho_e: self.rho_e,
            rho_d: self.rho_d,
            strategy: self.sampling,
            optim: self.optim(),
            warmup_fraction: self.warmup_fraction,
        }
    }

    pub fn deviation_options(&self, ratios: Vec<f64>, modes: Vec<Mode>, n_throws: usize) -> DeviationOptions {
        DeviationOptions {
            rho_e: self.rho_e,
            ratios,
            modes,
            n_throws,
            strategy: self.sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        check_ratio("rho_e", self.rho_e).or_else(|e| bad(e.to_string()))?;
        check_ratio("rho_d", self.rho_d).or_else(|e| bad(e.to_string()))?;
        if self.rho_d > self.rho_e {
            return bad(format!("rho_d = {} must not exceed rho_e = {}", self.rho_d, self.rho_e));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{key} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0, 1], got {}", self.warmup_fraction));
        }
        for (key, v) in [("batch_size", self.batch_size), ("steps", self.steps), ("n_images", self.n_images)] {
            if v == 0 {
                return bad(format!("{key} must be at least 1"));
            }
        }
        Ok(())
    }

    /// Strict parse of JSON text followed by validation.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
