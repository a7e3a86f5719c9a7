use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridShape;

/// Module that reconstructs thrown tokens from the zero-filled grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    DepthwiseConv,
    TransformerBlock,
    ConvnextBlock,
    AveragePool,
}

/// Which masked tokens are decoded and supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every masked token goes through the decoder (thrown tokens are
    /// treated as retained).
    Full,
    /// Thrown tokens are dropped and receive no loss.
    Partial,
    /// Thrown tokens are dropped from the decoder and rebuilt by the
    /// spatial aggregation module.
    Progressive,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Partial => "partial",
            Mode::Progressive => "progressive",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "partial" => Ok(Mode::Partial),
            "progressive" => Ok(Mode::Progressive),
            other => Err(Error::Param(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
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
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// Smallest configuration that exercises every mechanism.
    pub fn toy() -> Self {
        ModelConfig {
            grid: GridShape { rows: 8, cols: 8 },
            patch_size: 4,
            in_channels: 3,
            enc_dim: 32,
            enc_depth: 2,
            enc_heads: 2,
            dec_dim: 16,
            dec_depth: 1,
            dec_heads: 2,
            mlp_ratio: 4.0,
            kernel_size: 3,
            aggregation: Aggregation::DepthwiseConv,
            norm_pix: true,
            mode: Mode::Progressive,
        }
    }

    /// ViT-B/16 encoder with the standard 8-block, 512-wide MAE decoder at 224².
    pub fn mae_vit_base() -> Self {
        ModelConfig {
            grid: GridShape { rows: 14, cols: 14 },
            patch_size: 16,
            in_channels: 3,
            enc_dim: 768,
            enc_depth: 12,
            enc_heads: 12,
            dec_dim: 512,
            dec_depth: 8,
            dec_heads: 16,
            mlp_ratio: 4.0,
            kernel_size: 7,
            aggregation: Aggregation::DepthwiseConv,
            norm_pix: true,
            mode: Mode::Progressive,
        }
    }

    /// ViT-L/16 encoder with the standard MAE decoder at 224².
    pub fn mae_vit_large() -> Self {
        ModelConfig {
            enc_dim: 1024,
            enc_depth: 24,
            enc_heads: 16,
            ..Self::mae_vit_base()
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.grid.n_tokens()
    }

    /// Pixels per patch, `patch_size² · in_channels`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn image_height(&self) -> usize {
        self.grid.rows * self.patch_size
    }

    pub fn image_width(&self) -> usize {
        self.grid.cols * self.patch_size
    }

    pub fn enc_hidden(&self) -> usize {
        (self.enc_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn dec_hidden(&self) -> usize {
        (self.dec_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return bad("grid must be non-empty".into());
        }
        if self.patch_size == 0 || self.in_channels == 0 {
            return bad("patch_size and in_channels must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        for (name, dim, depth, heads) in [
            ("enc", self.enc_dim, self.enc_depth, self.enc_heads),
            ("dec", self.dec_dim, self.dec_depth, self.dec_heads),
        ] {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return bad(format!("{name}_heads = {heads} must divide {name}_dim = {dim}"));
            }
            if dim % 4 != 0 {
                return bad(format!("{name}_dim = {dim} must be a multiple of 4 for 2-D sin-cos positions"));
            }
            if depth == 0 && name == "enc" {
                return bad("enc_depth must be positive".into());
            }
        }
        if !(self.mlp_ratio > 0.0) || !self.mlp_ratio.is_finite() {
            return bad(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        ModelConfig::mae_vit_base().validate().unwrap();
        ModelConfig::mae_vit_large().validate().unwrap();
        assert_eq!(ModelConfig::mae_vit_base().patch_dim(), 768);
        assert_eq!(ModelConfig::mae_vit_base().n_tokens(), 196);
    }

    #[test]
    fn invariants_rejected() {
        let mut c = ModelConfig::toy();
        c.kernel_size = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.enc_heads = 3;
        assert!(c.validate().unwrap_err().to_string().contains("enc_heads"));
    }
}
