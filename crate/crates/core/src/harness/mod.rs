//! Experiment plumbing: configuration, synthetic data, file formats,
//! report writers and the command line interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod ppm;
pub mod recon;
pub mod report;
pub mod synth;

pub use config::{parse_config, RunConfig};
pub use synth::{synth_batch, synth_image, SynthImageSpec, SynthKind};

use crate::numerics::Tensor;
use crate::rng;

/// Seed streams derived from a run's master seed.
pub const STREAM_PARAMS: u64 = 1;
pub const STREAM_DATA: u64 = 2;
pub const STREAM_MASK: u64 = 3;

/// The first `count` synthetic images of a run, sized for its model.
pub fn image_pool(cfg: &RunConfig, count: usize) -> Vec<Tensor> {
    let model = cfg.model();
    let spec = SynthImageSpec {
        kind: cfg.data,
        height: model.image_height(),
        width: model.image_width(),
        channels: model.in_channels,
        seed: rng::derive(cfg.seed, &[STREAM_DATA]),
    };
    synth_batch(&spec, count)
}
