//! Analytic FLOPs and activation-memory accounting.
//!
//! All counts are for one forward pass over one image. Costs are counted in
//! multiply-accumulates and converted to FLOPs with the report's
//! [`Convention`]; the default counts one MAC as one FLOP, which is the
//! convention under which the standard MAE decoder costs about 5.3 GFLOPs.
//! Layer norms and bias additions contribute linear `tokens · dim` terms;
//! activation functions are not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_ratio, token_count};
use crate::model::{Aggregation, Mode, ModelConfig};

const GIGA: f64 = 1e9;

/// How multiply-accumulates are converted to FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    MacIsOneFlop,
    MacIsTwoFlops,
}

impl Convention {
    pub fn flops_per_mac(self) -> f64 {
        match self {
            Convention::MacIsOneFlop => 1.0,
            Convention::MacIsTwoFlops => 2.0,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Convention::MacIsOneFlop => "1 MAC = 1 FLOP",
            Convention::MacIsTwoFlops => "1 MAC = 2 FLOPs",
        }
    }
}

/// MACs of `depth` pre-norm transformer blocks over `tokens` tokens:
/// `depth · tokens · ((4 + 2·mlp_ratio)·dim² + 2·tokens·dim)`.
pub fn transformer_stack_macs(tokens: usize, dim: usize, depth: usize, mlp_ratio: f64) -> f64 {
    let (t, d) = (tokens as f64, dim as f64);
    depth as f64 * t * ((4.0 + 2.0 * mlp_ratio) * d * d + 2.0 * t * d)
}

/// [`transformer_stack_macs`] in GFLOPs under `convention`.
pub fn flops_transformer_stack(
    tokens: usize,
    dim: usize,
    depth: usize,
    mlp_ratio: f64,
    convention: Convention,
) -> f64 {
    transformer_stack_macs(tokens, dim, depth, mlp_ratio) * convention.flops_per_mac() / GIGA
}

/// MACs of the aggregation module evaluated at `positions` grid cells.
pub fn aggregation_macs(kind: Aggregation, positions: usize, dim: usize, kernel: usize, mlp_ratio: f64) -> f64 {
    let (p, d, k) = (positions as f64, dim as f64, kernel as f64);
    match kind {
        Aggregation::DepthwiseConv | Aggregation::AveragePool => k * k * d * p,
        Aggregation::TransformerBlock => transformer_stack_macs(positions, dim, 1, mlp_ratio),
        Aggregation::ConvnextBlock => p * (k * k * d + 2.0 * mlp_ratio * d * d),
    }
}

/// Aggregation GFLOPs for `config`, evaluated at every grid cell.
pub fn flops_aggregation(config: &ModelConfig, convention: Convention) -> f64 {
    aggregation_macs(
        config.aggregation,
        config.n_tokens(),
        config.dec_dim,
        config.kernel_size,
        config.mlp_ratio,
    ) * convention.flops_per_mac()
        / GIGA
}

/// Per-stage GFLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageFlops {
    /// Patch embedding of visible tokens, encoder blocks and final norm.
    pub encoder: f64,
    /// Decoder embedding, decoder blocks and their norms.
    pub decoder: f64,
    /// Spatial aggregation (zero unless the mode is progressive).
    pub aggregation: f64,
    /// Prediction norm and linear head over supervised positions.
    pub head: f64,
}

impl StageFlops {
    pub fn total(&self) -> f64 {
        self.encoder + self.decoder + self.aggregation + self.head
    }
}

/// Token counts behind a cost figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub total: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub supervised: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    pub scope: String,
    pub rho_e: f64,
    pub rho_d: f64,
    pub mode: Mode,
    pub tokens: TokenCounts,
    pub flops_g: StageFlops,
    pub baseline_flops_g: StageFlops,
    pub total_flops_g: f64,
    pub flops_ratio: f64,
    pub decoder_flops_ratio: f64,
    pub memory_units: f64,
    pub baseline_memory_units: f64,
    pub memory_ratio: f64,
}

fn token_counts(config: &ModelConfig, rho_e: f64, rho_d: f64) -> TokenCounts {
    let n = config.n_tokens();
    let masked = token_count(n, rho_e);
    let thrown = match config.mode {
        Mode::Full => 0,
        Mode::Partial | Mode::Progressive => token_count(n, rho_d).min(masked),
    };
    let supervised = match config.mode {
        Mode::Partial => masked - thrown,
        Mode::Full | Mode::Progressive => masked,
    };
    TokenCounts {
        total: n,
        encoder: n - masked,
        decoder: n - thrown,
        supervised,
    }
}

fn stage_flops(config: &ModelConfig, tokens: TokenCounts, convention: Convention) -> StageFlops {
    let f = convention.flops_per_mac() / GIGA;
    let (e, d) = (config.enc_dim as f64, config.dec_dim as f64);
    let (te, td) = (tokens.encoder as f64, tokens.decoder as f64);
    let c_pix = config.patch_dim() as f64;

    let enc_norms = (2 * config.enc_depth + 1) as f64 * te * e;
    let encoder = te * c_pix * e
        + te * e
        + transformer_stack_macs(tokens.encoder, config.enc_dim, config.enc_depth, config.mlp_ratio)
        + enc_norms;

    let dec_norms = (2 * config.dec_depth) as f64 * td * d;
    let decoder = te * e * d
        + te * d
        + transformer_stack_macs(tokens.decoder, config.dec_dim, config.dec_depth, config.mlp_ratio)
        + dec_norms;

    let aggregation = match config.mode {
        Mode::Progressive => aggregation_macs(
            config.aggregation,
            tokens.total,
            config.dec_dim,
            config.kernel_size,
            config.mlp_ratio,
        ),
        Mode::Full | Mode::Partial => 0.0,
    };

    let s = tokens.supervised as f64;
    let head = s * d + s * d * c_pix + s * c_pix;

    StageFlops {
        encoder: encoder * f,
        decoder: decoder * f,
        aggregation: aggregation * f,
        head: head * f,
    }
}

fn stack_activations(tokens: usize, dim: usize, depth: usize, heads: usize, mlp_ratio: f64) -> f64 {
    let (t, d) = (tokens as f64, dim as f64);
    depth as f64 * ((6.0 + 2.0 * mlp_ratio) * t * d + heads as f64 * t * t)
}

/// Activation-memory proxy in stored elements.
///
/// Each transformer block keeps `(6 + 2·mlp_ratio)·tokens·dim` elements
/// (norm output, q, k, v, attention output, second norm output and the two
/// hidden MLP activations) plus one `tokens²` attention map per head. The
/// aggregation keeps the zero-filled grid and its output; the head keeps
/// its normalised input and prediction.
fn activation_units(config: &ModelConfig, tokens: TokenCounts) -> f64 {
    let enc = stack_activations(tokens.encoder, config.enc_dim, config.enc_depth, config.enc_heads, config.mlp_ratio)
        + (tokens.encoder * config.enc_dim) as f64;
    let dec = stack_activations(tokens.decoder, config.dec_dim, config.dec_depth, config.dec_heads, config.mlp_ratio)
        + (tokens.encoder * config.dec_dim) as f64;
    let agg = match config.mode {
        Mode::Progressive => 2.0 * (tokens.total * config.dec_dim) as f64,
        Mode::Full | Mode::Partial => 0.0,
    };
    let head = (tokens.supervised * (config.dec_dim + config.patch_dim())) as f64;
    enc + dec + agg + head
}

/// Activation-memory proxy and its ratio against `rho_d = 0`.
pub fn memory_estimate(config: &ModelConfig, rho_e: f64, rho_d: f64) -> Result<(f64, f64)> {
    check_rhos(rho_e, rho_d)?;
    let units = activation_units(config, token_counts(config, rho_e, rho_d));
    let base = activation_units(config, token_counts(config, rho_e, 0.0));
    Ok((units, units / base))
}

fn check_rhos(rho_e: f64, rho_d: f64) -> Result<()> {
    check_ratio("rho_e", rho_e)?;
    check_ratio("rho_d", rho_d)?;
    if rho_d > rho_e {
        return Err(Error::Param(format!("rho_d = {rho_d} exceeds rho_e = {rho_e}")));
    }
    Ok(())
}

/// Full cost breakdown of `config` at `(rho_e, rho_d)` with ratios against
/// the same configuration at `rho_d = 0`.
pub fn cost_report(config: &ModelConfig, rho_e: f64, rho_d: f64, convention: Convention) -> Result<CostReport> {
    config.validate()?;
    check_rhos(rho_e, rho_d)?;
    let tokens = token_counts(config, rho_e, rho_d);
    let base_tokens = token_counts(config, rho_e, 0.0);
    let flops = stage_flops(config, tokens, convention);
    let base = stage_flops(config, base_tokens, convention);
    let (memory_units, memory_ratio) = memory_estimate(config, rho_e, rho_d)?;
    Ok(CostReport {
        convention: convention.describe().into(),
        scope: "forward pass, one image".into(),
        rho_e,
        rho_d,
        mode: config.mode,
        tokens,
        flops_g: flops,
        baseline_flops_g: base,
        total_flops_g: flops.total(),
        flops_ratio: flops.total() / base.total(),
        decoder_flops_ratio: flops.decoder / base.decoder,
        memory_units,
        baseline_memory_units: activation_units(config, base_tokens),
        memory_ratio,
    })
}
