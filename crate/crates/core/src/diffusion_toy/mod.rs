//! Desk-scale conditional latent diffusion with a frozen denoiser.
//!
//! Video frames are projected to `latent_dim` latents by a fixed
//! [`LatentCodec`]. Each frame `i` of a clip is noised independently and
//! denoised by a [`FrozenDenoiser`] that attends to its own condition tokens
//! `c^(i)`. Only the [`Adapter`] (audio mapper plus attentive pooling) is
//! trained.

mod checkpoint;
mod codec;
mod denoiser;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use codec::LatentCodec;
pub use denoiser::{Denoiser, DenoiserShape, EchoNoise, FrozenDenoiser, ZeroDenoiser, PRIOR_VAR};
pub use sample::{audio_window, generate, generate_from_audio};
pub use schedule::{forward_noise, timestep_embedding, NoiseSchedule, BETA_END, BETA_START, DEFAULT_STEPS};
pub use train::{
    train, write_loss_history, FrozenHashes, Optimizer, TrainConfig, TrainOutcome, DEFAULT_ADAMW_RATE,
    DEFAULT_SGD_RATE,
};

use crate::audio_analysis::{toy_audio_features, TOY_LOG_FLOOR};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::media_io::{AudioEmbeddings, AudioSignal, Fps, Video};
use crate::numerics::{axpy, ParamSet, Rng, Tensor};
use crate::tempo_tokens::{
    build_condition_backward, build_condition_traced, map_audio_backward, map_audio_traced,
    regularization, regularization_grad, ConditionMode, ConditioningSequence, MapperParams,
    PoolingParams,
};

/// Sizes and seeds of the toy model. Everything frozen is regenerated from
/// `backbone_seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder layers `H` per audio segment.
    pub layers: usize,
    /// Encoder feature width `d` per layer.
    pub enc_dim: usize,
    /// Token width `d_t` per layer; conditions are `layers * token_dim` wide.
    pub token_dim: usize,
    pub mapper_hidden: usize,
    pub pool_local: usize,
    pub pool_cross: usize,
    pub latent_dim: usize,
    pub attn_dim: usize,
    pub time_dim: usize,
    pub denoiser_hidden: usize,
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    /// Frames per generated clip.
    pub frames: usize,
    pub diffusion_steps: usize,
    pub mode: ConditionMode,
    pub backbone_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            enc_dim: 16,
            token_dim: 8,
            mapper_hidden: 512,
            pool_local: 16,
            pool_cross: 16,
            latent_dim: 16,
            attn_dim: 16,
            time_dim: 8,
            denoiser_hidden: 64,
            width: 64,
            height: 64,
            fps: Fps::integer(24),
            frames: 24,
            diffusion_steps: DEFAULT_STEPS,
            mode: ConditionMode::default(),
            backbone_seed: 0x7e3b_0001,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.layers,
            self.enc_dim,
            self.token_dim,
            self.mapper_hidden,
            self.pool_local,
            self.pool_cross,
            self.latent_dim,
            self.attn_dim,
            self.time_dim,
            self.denoiser_hidden,
            self.frames,
            self.diffusion_steps,
        ];
        if sizes.contains(&0) || self.width == 0 || self.height == 0 {
            return Err(Error::validation("model sizes must be positive"));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::validation("time embedding width must be even"));
        }
        if matches!(
            self.mode,
            ConditionMode::Windows {
                max_resolutions: Some(0)
            }
        ) {
            return Err(Error::validation("at least one window resolution is required"));
        }
        Ok(())
    }

    /// Width of one flattened condition token.
    pub fn cond_dim(&self) -> usize {
        self.layers * self.token_dim
    }

    pub fn denoiser_shape(&self) -> DenoiserShape {
        DenoiserShape {
            latent_dim: self.latent_dim,
            cond_dim: self.cond_dim(),
            attn_dim: self.attn_dim,
            time_dim: self.time_dim,
            hidden: self.denoiser_hidden,
        }
    }
}

/// The frozen part: schedule, codec and denoiser.
#[derive(Clone, Debug)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub codec: LatentCodec,
    pub denoiser: FrozenDenoiser,
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::linear(config.diffusion_steps, BETA_START, BETA_END)?;
        let codec = LatentCodec::new(
            config.width,
            config.height,
            config.latent_dim,
            &mut Rng::stream(config.backbone_seed, 1),
        )?;
        let denoiser = FrozenDenoiser::new(
            config.denoiser_shape(),
            &mut Rng::stream(config.backbone_seed, 2),
        )?;
        Ok(ToyModel {
            config,
            schedule,
            codec,
            denoiser,
        })
    }

    pub fn frozen_hashes(&self) -> FrozenHashes {
        FrozenHashes {
            denoiser: self.denoiser.param_hash(),
            codec: self.codec.param_hash(),
        }
    }

    /// Latents for every frame plus one embedding segment per frame.
    pub fn encode_clip(&self, video: &Video, audio: &AudioSignal) -> Result<ToyClip> {
        if video.width != self.config.width || video.height != self.config.height {
            return Err(Error::shape(format!(
                "video is {}x{}, model expects {}x{}",
                video.width, video.height, self.config.width, self.config.height
            )));
        }
        let latents = video
            .frames
            .iter()
            .map(|f| self.codec.encode_frame(f))
            .collect::<Result<Vec<_>>>()?;
        let embeddings = embed_audio(audio, video.frame_count(), &self.config)?;
        ToyClip::new(latents, embeddings)
    }

    pub fn encode_dataset(&self, pairs: &[(Video, AudioSignal)], exec: Exec) -> Result<ToyDataset> {
        let clips = exec
            .map(pairs, |(v, a)| self.encode_clip(v, a))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        ToyDataset::new(clips)
    }
}

/// Toy encoder features rescaled so silence maps to 0 and full-scale tones
/// land near 1.
pub fn embed_audio(audio: &AudioSignal, segments: usize, config: &ModelConfig) -> Result<AudioEmbeddings> {
    let raw = toy_audio_features(audio, segments, config.layers, config.enc_dim)?;
    let floor = TOY_LOG_FLOOR.ln();
    let shape = raw.values.shape().to_vec();
    let data = raw.values.data().iter().map(|v| (v - floor) / -floor).collect();
    AudioEmbeddings::new(Tensor::new(shape, data)?)
}

/// Trainable parameters: the audio mapper and the attentive pooling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub mapper: MapperParams,
    pub pooling: PoolingParams,
}

impl Adapter {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, 0);
        let h = config.mapper_hidden;
        let mapper = MapperParams::init(config.layers * config.enc_dim, [h; 3], config.cond_dim(), &mut rng);
        let pooling = PoolingParams::init(config.cond_dim(), config.pool_local, config.pool_cross, &mut rng);
        Adapter { mapper, pooling }
    }

    pub fn zeros_like(&self) -> Self {
        Adapter {
            mapper: self.mapper.zeros_like(),
            pooling: self.pooling.zeros_like(),
        }
    }

    pub fn mapper_hash(&self) -> String {
        self.mapper.param_hash()
    }

    pub fn pooling_hash(&self) -> String {
        self.pooling.param_hash()
    }
}

impl ParamSet for Adapter {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.mapper.tensors();
        out.extend(self.pooling.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.mapper.tensors_mut();
        out.extend(self.pooling.tensors_mut());
        out
    }
}

/// One encoded clip: `frames x latent_dim` latents and one embedding segment
/// per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyClip {
    pub latents: Vec<Vec<f64>>,
    pub embeddings: AudioEmbeddings,
}

impl ToyClip {
    pub fn new(latents: Vec<Vec<f64>>, embeddings: AudioEmbeddings) -> Result<Self> {
        if latents.is_empty() || latents.len() != embeddings.segments() {
            return Err(Error::shape(format!(
                "{} latent frames but {} embedding segments",
                latents.len(),
                embeddings.segments()
            )));
        }
        let d = latents[0].len();
        if d == 0 || latents.iter().any(|z| z.len() != d) {
            return Err(Error::shape("latent frames differ in width"));
        }
        Ok(ToyClip { latents, embeddings })
    }

    pub fn frames(&self) -> usize {
        self.latents.len()
    }

    /// Frames `start .. start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<ToyClip> {
        if start + len > self.frames() || len == 0 {
            return Err(Error::shape(format!(
                "window {start}+{len} outside {} frames",
                self.frames()
            )));
        }
        ToyClip::new(
            self.latents[start..start + len].to_vec(),
            self.embeddings.slice(start, len)?,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub clips: Vec<ToyClip>,
}

impl ToyDataset {
    pub fn new(clips: Vec<ToyClip>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::validation("dataset needs at least one clip"));
        }
        Ok(ToyDataset { clips })
    }

    /// Draws `count` random clips, each cut to a random `frames`-long window.
    pub fn sample_batch(&self, count: usize, frames: usize, rng: &mut Rng) -> Result<Vec<ToyClip>> {
        (0..count)
            .map(|_| {
                let clip = &self.clips[rng.range(0, self.clips.len())];
                if clip.frames() < frames {
                    return Err(Error::shape(format!(
                        "clip has {} frames, batch needs {frames}",
                        clip.frames()
                    )));
                }
                let start = rng.range(0, clip.frames() - frames + 1);
                clip.window(start, frames)
            })
            .collect()
    }
}

/// The timestep and per-frame noise for one batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<Vec<f64>>,
}

impl NoiseDraw {
    pub fn sample(frames: usize, latent_dim: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Self {
        let t = rng.range(1, schedule.steps() + 1);
        let eps = (0..frames).map(|_| rng.normal_vec(latent_dim)).collect();
        NoiseDraw { t, eps }
    }

    pub fn sample_batch(batch: &[ToyClip], schedule: &NoiseSchedule, rng: &mut Rng) -> Vec<NoiseDraw> {
        batch
            .iter()
            .map(|c| NoiseDraw::sample(c.frames(), c.latents[0].len(), schedule, rng))
            .collect()
    }
}

/// Loss split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub cldm: f64,
    pub reg: f64,
    pub total: f64,
}

fn check_item(latents: &[Vec<f64>], cond: &ConditioningSequence, draw: &NoiseDraw, d_z: usize) -> Result<()> {
    if cond.frame_count() != latents.len() {
        return Err(Error::shape(format!(
            "{} condition frames for {} video frames",
            cond.frame_count(),
            latents.len()
        )));
    }
    if draw.eps.len() != latents.len() {
        return Err(Error::shape("noise draw does not match the frame count"));
    }
    if latents.iter().chain(&draw.eps).any(|z| z.len() != d_z) {
        return Err(Error::shape(format!("latents and noise must have width {d_z}")));
    }
    Ok(())
}

/// Mean over frames of `|eps - eps_hat|^2` for one item, plus `dL/deps_hat`
/// per frame scaled by `grad_scale` when requested.
fn item_cldm(
    latents: &[Vec<f64>],
    cond: &ConditioningSequence,
    draw: &NoiseDraw,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    grad_scale: Option<f64>,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    check_item(latents, cond, draw, denoiser.latent_dim())?;
    schedule.check_t(draw.t)?;
    let n = latents.len() as f64;
    let mut loss = 0.0;
    let mut d_frames = Vec::new();
    for (i, (z0, eps)) in latents.iter().zip(&draw.eps).enumerate() {
        let z_t = forward_noise(z0, draw.t, eps, schedule)?;
        let pred = denoiser.predict(&z_t, draw.t, &cond.frames[i], schedule);
        let diff: Vec<f64> = pred.iter().zip(eps).map(|(p, e)| p - e).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        if let Some(scale) = grad_scale {
            let d_eps: Vec<f64> = diff.iter().map(|d| 2.0 * d * scale / n).collect();
            d_frames.push(denoiser.backward_cond(&z_t, draw.t, &cond.frames[i], schedule, &d_eps));
        }
    }
    Ok((loss / n, d_frames))
}

/// Conditional latent diffusion loss for fixed noise draws: the mean over
/// items of the per-frame mean squared noise error.
pub fn cldm_loss_with(
    items: &[(&[Vec<f64>], &ConditioningSequence)],
    draws: &[NoiseDraw],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if items.is_empty() || items.len() != draws.len() {
        return Err(Error::shape("need one noise draw per batch item"));
    }
    let mut total = 0.0;
    for ((lat, cond), draw) in items.iter().zip(draws) {
        total += item_cldm(lat, cond, draw, denoiser, schedule, None)?.0;
    }
    Ok(total / items.len() as f64)
}

/// [`cldm_loss_with`] with `(t, eps)` drawn from `rng`, item by item.
pub fn cldm_loss(
    items: &[(&[Vec<f64>], &ConditioningSequence)],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let draws: Vec<NoiseDraw> = items
        .iter()
        .map(|(lat, _)| {
            let d_z = lat.first().map_or(denoiser.latent_dim(), |z| z.len());
            NoiseDraw::sample(lat.len(), d_z, schedule, rng)
        })
        .collect();
    cldm_loss_with(items, &draws, denoiser, schedule)
}

/// Everything the loss needs besides the batch and the adapter.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub mode: ConditionMode,
    pub lambda_l1: f64,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a ToyModel, lambda_l1: f64) -> Self {
        Objective {
            denoiser: &model.denoiser,
            schedule: &model.schedule,
            mode: model.config.mode,
            lambda_l1,
        }
    }
}

struct ItemResult {
    cldm: f64,
    reg: f64,
    grad: Option<Vec<f64>>,
}

fn evaluate_item(
    clip: &ToyClip,
    draw: &NoiseDraw,
    adapter: &Adapter,
    obj: &Objective,
    grad_scale: Option<f64>,
) -> Result<ItemResult> {
    let (tokens, mtrace) = map_audio_traced(&clip.embeddings, &adapter.mapper)?;
    let (cond, ctrace) = build_condition_traced(&tokens, &adapter.pooling, obj.mode)?;
    let (cldm, d_frames) = item_cldm(&clip.latents, &cond, draw, obj.denoiser, obj.schedule, grad_scale)?;
    let reg = regularization(&tokens, obj.lambda_l1);
    let grad = match grad_scale {
        None => None,
        Some(scale) => {
            let mut grad = adapter.zeros_like();
            let mut d_tokens =
                build_condition_backward(&tokens, &adapter.pooling, &ctrace, &d_frames, &mut grad.pooling);
            for (dt, dr) in d_tokens.iter_mut().zip(regularization_grad(&tokens, obj.lambda_l1)) {
                axpy(dt, scale, &dr);
            }
            map_audio_backward(&adapter.mapper, &mtrace, &d_tokens, &mut grad.mapper);
            Some(grad.flatten())
        }
    };
    Ok(ItemResult { cldm, reg, grad })
}

fn batch_eval(
    batch: &[ToyClip],
    draws: &[NoiseDraw],
    adapter: &Adapter,
    obj: &Objective,
    want_grad: bool,
    exec: Exec,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::shape("need one noise draw per batch item"));
    }
    let n = batch.len() as f64;
    let scale = want_grad.then_some(1.0 / n);
    let results = exec.map_range(batch.len(), |i| evaluate_item(&batch[i], &draws[i], adapter, obj, scale));
    let mut cldm = 0.0;
    let mut reg = 0.0;
    let mut grad: Option<Vec<f64>> = None;
    // fixed-order reduction keeps parallel and sequential runs bit-identical
    for r in results {
        let r = r?;
        cldm += r.cldm;
        reg += r.reg;
        if let Some(g) = r.grad {
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => axpy(acc, 1.0, &g),
            }
        }
    }
    let (cldm, reg) = (cldm / n, reg / n);
    Ok((
        LossParts {
            cldm,
            reg,
            total: cldm + reg,
        },
        grad,
    ))
}

/// `L_CLDM + lambda / L * sum |a|_1`, both terms averaged over batch items,
/// for fixed noise draws.
pub fn total_loss_with(
    batch: &[ToyClip],
    draws: &[NoiseDraw],
    adapter: &Adapter,
    obj: &Objective,
) -> Result<LossParts> {
    Ok(batch_eval(batch, draws, adapter, obj, false, Exec::Sequential)?.0)
}

/// [`total_loss_with`] with noise drawn from `rng`.
pub fn total_loss(batch: &[ToyClip], adapter: &Adapter, obj: &Objective, rng: &mut Rng) -> Result<LossParts> {
    let draws = NoiseDraw::sample_batch(batch, obj.schedule, rng);
    total_loss_with(batch, &draws, adapter, obj)
}

/// Loss and its gradient with respect to the flattened adapter parameters
/// (order of [`ParamSet::flatten`]).
pub fn loss_and_grad(
    batch: &[ToyClip],
    draws: &[NoiseDraw],
    adapter: &Adapter,
    obj: &Objective,
    exec: Exec,
) -> Result<(LossParts, Vec<f64>)> {
    let (parts, grad) = batch_eval(batch, draws, adapter, obj, true, exec)?;
    Ok((parts, grad.expect("gradient requested")))
}

/// Conditions for a clip's embeddings under `adapter`.
pub fn condition_for(
    embeddings: &AudioEmbeddings,
    adapter: &Adapter,
    mode: ConditionMode,
) -> Result<ConditioningSequence> {
    let (tokens, _) = map_audio_traced(embeddings, &adapter.mapper)?;
    Ok(build_condition_traced(&tokens, &adapter.pooling, mode)?.0)
}
