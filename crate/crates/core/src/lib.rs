//! Monocular depth estimation with a structure-attentioned memory.
//!
//! Two-stage training: a depth auto-encoder learns a structural latent space,
//! then an RGB network with per-level memory modules is trained to match it.

pub mod backbone;
pub mod data;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod som;
pub mod tensor;

pub use backbone::{Decoder, DecoderVariant, Encoder, EncoderConfig};
pub use data::{SceneFamily, SceneSample};
pub use metrics::{compute_metrics, MetricsReport};
pub use params::{ParamId, ParamStore};
pub use som::{AttentionMode, AttentionWeights, Som, SomConfig};
pub use tensor::{Graph, Shape, Tensor, TensorError, Var};
