//! STFT, spectral-flux onset detection in video-frame units, and a small
//! deterministic filterbank encoder used in place of a pretrained one.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::media_io::{AudioEmbeddings, AudioSignal, Fps};
use crate::numerics::Tensor;
use crate::peaks::{PeakPicker, PeakSet};

/// Magnitude spectrogram, `frames x bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub win: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn column(&self, t: usize) -> &[f64] {
        &self.magnitudes[t * self.bins..(t + 1) * self.bins]
    }

    /// Time-domain energy of windowed column `t`, recovered from its
    /// one-sided spectrum.
    pub fn column_energy(&self, t: usize) -> f64 {
        let col = self.column(t);
        let last = self.bins - 1;
        let mut e = 0.0;
        for (b, m) in col.iter().enumerate() {
            let w = if b == 0 || (b == last && self.win % 2 == 0) {
                1.0
            } else {
                2.0
            };
            e += w * m * m;
        }
        e / self.win as f64
    }

    /// Center frequency of bin `b` in Hz.
    pub fn bin_frequency(&self, b: usize) -> f64 {
        b as f64 * self.sample_rate as f64 / self.win as f64
    }
}

/// Periodic Hann window.
pub fn hann(win: usize) -> Vec<f64> {
    (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect()
}

pub fn stft_magnitude(signal: &AudioSignal, win: usize, hop: usize) -> Result<Spectrogram> {
    stft_magnitude_with(signal, win, hop, Exec::default())
}

pub fn stft_magnitude_with(
    signal: &AudioSignal,
    win: usize,
    hop: usize,
    exec: Exec,
) -> Result<Spectrogram> {
    if win == 0 || hop == 0 {
        return Err(Error::domain("window and hop must be positive"));
    }
    if signal.len() < win {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than the {win}-sample window",
            signal.len()
        )));
    }
    let frames = (signal.len() - win) / hop + 1;
    let bins = win / 2 + 1;
    let window = hann(win);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(win);
    let columns = exec.map_range(frames, |t| {
        let start = t * hop;
        let mut buf: Vec<Complex<f64>> = signal.samples[start..start + win]
            .iter()
            .zip(&window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        buf[..bins].iter().map(|c| c.norm()).collect::<Vec<f64>>()
    });
    Ok(Spectrogram {
        magnitudes: columns.concat(),
        frames,
        bins,
        win,
        hop,
        sample_rate: signal.sample_rate,
    })
}

/// Half-wave rectified frame-to-frame magnitude increase; `flux[0] = 0`.
pub fn spectral_flux(spec: &Spectrogram) -> Vec<f64> {
    let mut flux = vec![0.0; spec.frames];
    for t in 1..spec.frames {
        flux[t] = spec
            .column(t)
            .iter()
            .zip(spec.column(t - 1))
            .map(|(cur, prev)| (cur - prev).max(0.0))
            .sum();
    }
    flux
}

/// Which instant of an STFT column its frame index refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnTime {
    /// Column `t` sits at sample `t * hop`.
    Start,
    /// Column `t` sits at sample `t * hop + win / 2`. A click that starts
    /// just after a column boundary mostly lands in the second half of the
    /// previous window, so this is the reference that puts onsets on the
    /// frame where the sound begins.
    #[default]
    Center,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetParams {
    pub win: usize,
    /// STFT hop in samples; `None` ties it to one column per video frame.
    pub hop: Option<usize>,
    pub picker: PeakPicker,
    pub column_time: ColumnTime,
}

impl Default for OnsetParams {
    fn default() -> Self {
        OnsetParams {
            win: 1024,
            hop: None,
            picker: PeakPicker::default(),
            column_time: ColumnTime::default(),
        }
    }
}

impl OnsetParams {
    pub fn hop_for(&self, sample_rate: u32, fps: Fps) -> usize {
        self.hop
            .unwrap_or_else(|| (sample_rate as f64 / fps.as_f64()).round() as usize)
            .max(1)
    }

    pub fn validate(&self, sample_rate: u32, fps: Fps) -> Result<()> {
        let hop = self.hop_for(sample_rate, fps);
        if self.win < hop {
            return Err(Error::validation(format!(
                "window {} must be at least the hop {hop}",
                self.win
            )));
        }
        self.picker.validate()
    }
}

/// Onset peaks of `signal` as video-frame indices.
///
/// Flux peaks at STFT column `t` map to frame `round(s * fps / sr)` where
/// `s` is the column's sample position under `params.column_time`.
/// With `frames` given, indices are clamped to `frames - 1`.
pub fn detect_onsets(
    signal: &AudioSignal,
    fps: Fps,
    params: &OnsetParams,
    frames: Option<usize>,
) -> Result<PeakSet> {
    params.validate(signal.sample_rate, fps)?;
    let hop = params.hop_for(signal.sample_rate, fps);
    if signal.len() < params.win {
        return Ok(PeakSet::empty());
    }
    let spec = stft_magnitude(signal, params.win, hop)?;
    let flux = spectral_flux(&spec);
    let offset = match params.column_time {
        ColumnTime::Start => 0.0,
        ColumnTime::Center => params.win as f64 / 2.0,
    };
    let to_frame = fps.as_f64() / signal.sample_rate as f64;
    let indices = params
        .picker
        .pick(&flux)
        .into_iter()
        .map(|t| ((t * hop) as f64 + offset) * to_frame)
        .map(|f| f.round() as usize)
        .map(|i| match frames {
            Some(l) => i.min(l.saturating_sub(1)),
            None => i,
        })
        .collect();
    Ok(PeakSet::from_unsorted(indices))
}

/// Log energy floor of the toy encoder; silent input maps to `ln(FLOOR)`.
pub const TOY_LOG_FLOOR: f64 = 1e-4;
const TOY_WIN: usize = 512;
const TOY_HOP: usize = 128;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `bands x bins` triangular filters evenly spaced on the mel scale.
fn mel_filterbank(bands: usize, bins: usize, win: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / win as f64;
    (0..bands)
        .map(|k| {
            let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            (0..bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Deterministic stand-in for a pretrained audio encoder.
///
/// Log mel-band magnitudes per STFT column are average-pooled into exactly
/// `segments` equal time spans. Layer `l` is the base features stretched
/// about the log floor by `1 + 0.25 l`, so silent input stays at the floor
/// on every layer and louder input gives larger values on every layer.
pub fn toy_audio_features(
    signal: &AudioSignal,
    segments: usize,
    layers: usize,
    dim: usize,
) -> Result<AudioEmbeddings> {
    if segments == 0 || layers == 0 || dim == 0 {
        return Err(Error::domain("segments, layers and dim must be positive"));
    }
    let mut padded = signal.clone();
    if padded.len() < TOY_WIN {
        padded.samples.resize(TOY_WIN, 0.0);
    }
    let spec = stft_magnitude(&padded, TOY_WIN, TOY_HOP)?;
    let bank = mel_filterbank(dim, spec.bins, TOY_WIN, signal.sample_rate);
    let norm = TOY_WIN as f64 / 2.0;
    let floor = TOY_LOG_FLOOR.ln();
    let columns: Vec<Vec<f64>> = (0..spec.frames)
        .map(|t| {
            let col = spec.column(t);
            bank.iter()
                .map(|filt| {
                    let m: f64 = filt.iter().zip(col).map(|(f, c)| f * c).sum::<f64>() / norm;
                    m.max(TOY_LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect();

    // column t is centered at t * hop + win / 2 samples
    let duration = signal.len() as f64;
    let mut pooled = vec![vec![0.0; dim]; segments];
    let mut counts = vec![0usize; segments];
    for (t, col) in columns.iter().enumerate() {
        let center = (t * TOY_HOP + TOY_WIN / 2) as f64;
        let s = ((center / duration * segments as f64) as usize).min(segments - 1);
        for (p, v) in pooled[s].iter_mut().zip(col) {
            *p += v;
        }
        counts[s] += 1;
    }
    for s in 0..segments {
        if counts[s] > 0 {
            pooled[s].iter_mut().for_each(|v| *v /= counts[s] as f64);
        } else {
            // segment shorter than a hop: borrow the nearest column
            let center = (s as f64 + 0.5) * duration / segments as f64;
            let t = ((center - (TOY_WIN / 2) as f64) / TOY_HOP as f64)
                .round()
                .clamp(0.0, (spec.frames - 1) as f64) as usize;
            pooled[s] = columns[t].clone();
        }
    }

    let mut data = Vec::with_capacity(segments * layers * dim);
    for seg in &pooled {
        for l in 0..layers {
            let gain = 1.0 + 0.25 * l as f64;
            data.extend(seg.iter().map(|v| floor + gain * (v - floor)));
        }
    }
    AudioEmbeddings::new(Tensor::new(vec![segments, layers, dim], data)?)
}
