//! The masked-image-modeling network.
//!
//! The encoder sees only unmasked tokens. The decoder sees unmasked plus
//! retained tokens, the latter as copies of a learnable [MASK] embedding.
//! Thrown tokens never enter the decoder: in progressive mode they are
//! rebuilt from the decoder output by a small spatial module operating on
//! the zero-filled token grid, and the shared pixel head is applied to
//! both paths.

mod config;
mod network;
mod params;

pub use config::{Aggregation, Mode, ModelConfig};
pub use network::{loss_and_gradients, normalize_targets, patchify, unpatchify, PipelineOutput, Session};
pub use params::{is_aggregation_param, sincos_2d, ParamGrads, ParameterSet};
