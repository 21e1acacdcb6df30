use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("audio signal needs at least one sample"));
        }
        if sample_rate == 0 {
            return Err(Error::validation("sample rate must be positive"));
        }
        if let Some(s) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::validation(format!("sample {s} outside [-1, 1]")));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        // hound reports truncated chunks as synthetic io errors; only real OS
        // failures stay Io.
        hound::Error::IoError(io) if io.raw_os_error().is_some() => Error::Io(io),
        other => Error::format(format!("wav: {other}")),
    }
}

/// Reads 16-bit PCM WAV. Stereo is averaged to mono before dividing by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        other => wav_err(other),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(format!(
            "unsupported wav encoding: {:?} {}-bit (need PCM 16-bit)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::format(format!(
            "unsupported channel count {channels}"
        )));
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(wav_err)?;
    let samples: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            sum / channels as f64 / 32768.0
        })
        .collect();
    AudioSignal::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, rounding and clamping to the `i16` range.
pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &signal.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
