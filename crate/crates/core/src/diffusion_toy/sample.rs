use super::{condition_for, embed_audio, Adapter, Denoiser, ModelConfig, ToyModel};
use crate::error::{Error, Result};
use crate::media_io::{AudioEmbeddings, AudioSignal, Video};
use crate::numerics::Rng;

/// Ancestral sampling, one latent per embedding segment.
///
/// The initial latent and every step's noise are shared by all frames, so
/// frames differ only through their conditions.
pub fn generate(embeddings: &AudioEmbeddings, adapter: &Adapter, model: &ToyModel, rng: &mut Rng) -> Result<Video> {
    let cond = condition_for(embeddings, adapter, model.config.mode)?;
    let schedule = &model.schedule;
    let d_z = model.denoiser.latent_dim();
    let start = rng.normal_vec(d_z);
    let mut zs = vec![start; cond.frame_count()];
    for t in (1..=schedule.steps()).rev() {
        let (alpha, beta, ab) = (schedule.alpha(t), schedule.beta(t), schedule.alpha_bar(t));
        let noise = (t > 1).then(|| rng.normal_vec(d_z));
        let sigma = (beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab)).sqrt();
        let coef = beta / (1.0 - ab).sqrt();
        for (z, c) in zs.iter_mut().zip(&cond.frames) {
            let eps = model.denoiser.predict(z, t, c, schedule);
            for (k, zk) in z.iter_mut().enumerate() {
                let mut next = (*zk - coef * eps[k]) / alpha.sqrt();
                if let Some(n) = &noise {
                    next += sigma * n[k];
                }
                *zk = next;
            }
        }
    }
    let frames = zs.iter().map(|z| model.codec.decode_frame(z)).collect();
    Video::new(model.config.width, model.config.height, model.config.fps, frames)
}

/// The `frames / fps` seconds of `audio` starting at `start_secs`, padded
/// with silence where the audio runs out. Training windows pair one audio
/// segment with one video frame, so generation conditions on audio at the
/// same time scale.
pub fn audio_window(audio: &AudioSignal, start_secs: f64, config: &ModelConfig) -> Result<AudioSignal> {
    if !(start_secs >= 0.0 && start_secs.is_finite()) {
        return Err(Error::validation(format!("window start {start_secs} must be non-negative")));
    }
    let sr = audio.sample_rate as f64;
    let len = (config.frames as f64 / config.fps.as_f64() * sr).round() as usize;
    let from = ((start_secs * sr).round() as usize).min(audio.len());
    let mut samples: Vec<f64> = audio.samples[from..(from + len).min(audio.len())].to_vec();
    samples.resize(len.max(1), 0.0);
    AudioSignal::new(samples, audio.sample_rate)
}

/// [`generate`] from the [`audio_window`] at `start_secs`, one segment per
/// output frame.
pub fn generate_from_audio(
    audio: &AudioSignal,
    start_secs: f64,
    adapter: &Adapter,
    model: &ToyModel,
    rng: &mut Rng,
) -> Result<Video> {
    let window = audio_window(audio, start_secs, &model.config)?;
    let emb = embed_audio(&window, model.config.frames, &model.config)?;
    generate(&emb, adapter, model, rng)
}
