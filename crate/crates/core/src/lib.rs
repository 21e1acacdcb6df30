//! Audio-conditioned video generation tooling at desk scale.
//!
//! * [`tempo_tokens`]: maps audio-encoder activations to pseudo text tokens,
//!   builds the per-frame expanding-window conditions and the attentive token.
//! * [`diffusion_toy`]: a small conditional latent diffusion model with a
//!   frozen denoiser, used to train the mapper and pooling end to end.
//! * [`av_align`]: the audio-video alignment score computed from raw media
//!   via [`audio_analysis`] onsets and [`motion_analysis`] flow peaks.
//! * [`synthgen`]: synthetic audio-video clips with known event frames.

pub mod audio_analysis;
pub mod av_align;
pub mod diffusion_toy;
pub mod error;
pub mod exec;
pub mod media_io;
pub mod motion_analysis;
pub mod numerics;
pub mod peaks;
pub mod synthgen;
pub mod tempo_tokens;

pub use error::{Error, Result};
pub use exec::Exec;
