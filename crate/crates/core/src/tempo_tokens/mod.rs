//! Audio-to-token mapping, expanding context windows and attentive pooling.
//!
//! Frame and segment indices are 0-based throughout; the window for frame
//! `i` at half-width `j` spans `max(0, i - j) ..= min(i + j, L - 1)`.

mod mapper;
mod pooling;

pub use mapper::{map_audio, map_audio_backward, map_audio_traced, MapperParams, MapperTrace};
pub use pooling::{
    attentive_pool, attentive_pool_backward, attentive_pool_traced, PoolTrace, PoolingParams,
    COSINE_GUARD,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media_io::ConditionFile;
use crate::numerics::{axpy, Tensor};

/// Pseudo text tokens, shape `L x layers x token_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TempoTokens {
    pub values: Tensor,
}

impl TempoTokens {
    pub fn new(values: Tensor) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(Error::shape(format!(
                "tokens must be L x layers x token_dim, got {s:?}"
            )));
        }
        if !values.all_finite() {
            return Err(Error::Numeric("non-finite TempoTokens".into()));
        }
        Ok(TempoTokens { values })
    }

    /// `L` scalar tokens of width one, convenient in tests.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        TempoTokens::new(Tensor::new(vec![values.len(), 1, 1], values.to_vec())?)
    }

    pub fn segments(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn layers(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn token_dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Width of a flattened token, `layers * token_dim`.
    pub fn flat_dim(&self) -> usize {
        self.layers() * self.token_dim()
    }

    pub fn token(&self, u: usize) -> &[f64] {
        self.values.row(u)
    }
}

/// Number of context-window sizes for `frames` frames: `floor(log2 L) + 1`,
/// half-widths `1, 2, 4, ..`.
pub fn resolutions(frames: usize) -> usize {
    assert!(frames >= 1, "resolutions needs at least one frame");
    (usize::BITS - 1 - frames.leading_zeros()) as usize + 1
}

/// Inclusive mean of segments `l..=r`.
pub fn window_average(tokens: &TempoTokens, l: usize, r: usize) -> Result<Vec<f64>> {
    if l > r || r >= tokens.segments() {
        return Err(Error::domain(format!(
            "window {l}..={r} invalid for {} segments",
            tokens.segments()
        )));
    }
    let mut out = vec![0.0; tokens.flat_dim()];
    for s in l..=r {
        axpy(&mut out, 1.0, tokens.token(s));
    }
    let count = (r - l + 1) as f64;
    out.iter_mut().for_each(|v| *v /= count);
    Ok(out)
}

/// The `(l, r)` windows of frame `i`, smallest first, at most `max_res` of them.
pub fn frame_windows(frame: usize, frames: usize, max_res: usize) -> Vec<(usize, usize)> {
    (0..resolutions(frames).min(max_res))
        .map(|k| {
            let j = 1usize << k;
            (frame.saturating_sub(j), (frame + j).min(frames - 1))
        })
        .collect()
}

/// How per-frame conditions are assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionMode {
    /// Context windows (all resolutions, or the first `max_resolutions`)
    /// followed by the attentive token.
    Windows { max_resolutions: Option<usize> },
    /// One global mean token, identical for every frame.
    Vector,
}

impl Default for ConditionMode {
    fn default() -> Self {
        ConditionMode::Windows {
            max_resolutions: None,
        }
    }
}

/// Per-frame token lists plus the attention distribution used for the
/// attentive token (empty in vector mode).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSequence {
    pub frames: Vec<Vec<Vec<f64>>>,
    pub attention: Vec<f64>,
}

impl ConditioningSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Tokens per frame, or an error if frames disagree.
    pub fn tokens_per_frame(&self) -> Result<usize> {
        let n = self
            .frames
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::validation("conditioning sequence has no frames"))?;
        if let Some(i) = self.frames.iter().position(|f| f.len() != n) {
            return Err(Error::validation(format!(
                "frame {i} has {} tokens, frame 0 has {n}",
                self.frames[i].len()
            )));
        }
        Ok(n)
    }

    pub fn token_dim(&self) -> usize {
        self.frames
            .first()
            .and_then(|f| f.first())
            .map_or(0, Vec::len)
    }

    pub fn to_condition_file(&self) -> Result<ConditionFile> {
        let per_frame = self.tokens_per_frame()?;
        let d = self.token_dim();
        if per_frame == 0 || d == 0 {
            return Err(Error::validation("empty conditioning tokens"));
        }
        let mut data = Vec::with_capacity(self.frames.len() * per_frame * d);
        for (i, frame) in self.frames.iter().enumerate() {
            for tok in frame {
                if tok.len() != d {
                    return Err(Error::validation(format!(
                        "frame {i} has a token of width {}, expected {d}",
                        tok.len()
                    )));
                }
                data.extend_from_slice(tok);
            }
        }
        Ok(ConditionFile {
            tokens: Tensor::new(vec![self.frames.len(), per_frame, d], data)?,
        })
    }
}

/// What the backward pass needs from [`build_condition_traced`].
#[derive(Clone, Debug)]
pub struct ConditionTrace {
    mode: ConditionMode,
    windows: Vec<Vec<(usize, usize)>>,
    pool: Option<PoolTrace>,
}

/// Full windowed conditioning: `resolutions(L)` windows plus the attentive
/// token per frame.
pub fn build_condition(tokens: &TempoTokens, params: &PoolingParams) -> Result<ConditioningSequence> {
    Ok(build_condition_traced(tokens, params, ConditionMode::default())?.0)
}

/// Single-vector baseline: the global mean token for every frame.
pub fn single_vector_condition(tokens: &TempoTokens) -> ConditioningSequence {
    let n = tokens.segments();
    let mean = window_average(tokens, 0, n - 1).expect("non-empty tokens");
    ConditioningSequence {
        frames: vec![vec![mean]; n],
        attention: Vec::new(),
    }
}

pub fn build_condition_traced(
    tokens: &TempoTokens,
    params: &PoolingParams,
    mode: ConditionMode,
) -> Result<(ConditioningSequence, ConditionTrace)> {
    let n = tokens.segments();
    match mode {
        ConditionMode::Vector => Ok((
            single_vector_condition(tokens),
            ConditionTrace {
                mode,
                windows: vec![vec![(0, n - 1)]; n],
                pool: None,
            },
        )),
        ConditionMode::Windows { max_resolutions } => {
            let max_res = max_resolutions.unwrap_or(usize::MAX);
            if max_res == 0 {
                return Err(Error::domain("at least one window resolution is required"));
            }
            let (atten, pool) = attentive_pool_traced(tokens, params)?;
            let mut frames = Vec::with_capacity(n);
            let mut windows = Vec::with_capacity(n);
            for i in 0..n {
                let w = frame_windows(i, n, max_res);
                let mut toks: Vec<Vec<f64>> = w
                    .iter()
                    .map(|&(l, r)| window_average(tokens, l, r))
                    .collect::<Result<_>>()?;
                toks.push(atten.clone());
                frames.push(toks);
                windows.push(w);
            }
            let attention = pool.distribution.clone();
            Ok((
                ConditioningSequence { frames, attention },
                ConditionTrace {
                    mode,
                    windows,
                    pool: Some(pool),
                },
            ))
        }
    }
}

/// Backward of [`build_condition_traced`]: returns `dL/dtokens` per segment
/// and accumulates pooling gradients into `grad`.
pub fn build_condition_backward(
    tokens: &TempoTokens,
    params: &PoolingParams,
    trace: &ConditionTrace,
    d_frames: &[Vec<Vec<f64>>],
    grad: &mut PoolingParams,
) -> Vec<Vec<f64>> {
    let d = tokens.flat_dim();
    let mut d_tokens = vec![vec![0.0; d]; tokens.segments()];
    let mut d_atten = vec![0.0; d];
    for (i, df) in d_frames.iter().enumerate() {
        for (k, &(l, r)) in trace.windows[i].iter().enumerate() {
            let scale = 1.0 / (r - l + 1) as f64;
            for dt in &mut d_tokens[l..=r] {
                axpy(dt, scale, &df[k]);
            }
        }
        if matches!(trace.mode, ConditionMode::Windows { .. }) {
            axpy(&mut d_atten, 1.0, &df[trace.windows[i].len()]);
        }
    }
    if let Some(pool) = &trace.pool {
        attentive_pool_backward(tokens, params, pool, &d_atten, grad, &mut d_tokens);
    }
    d_tokens
}

/// `(lambda / L) * sum_u |a_u|_1`.
pub fn regularization(tokens: &TempoTokens, lambda_l1: f64) -> f64 {
    let l1: f64 = tokens.values.data().iter().map(|v| v.abs()).sum();
    lambda_l1 / tokens.segments() as f64 * l1
}

/// Gradient of [`regularization`] with respect to each flattened token.
pub fn regularization_grad(tokens: &TempoTokens, lambda_l1: f64) -> Vec<Vec<f64>> {
    let scale = lambda_l1 / tokens.segments() as f64;
    (0..tokens.segments())
        .map(|u| tokens.token(u).iter().map(|v| scale * v.signum() * (*v != 0.0) as u8 as f64).collect())
        .collect()
}
