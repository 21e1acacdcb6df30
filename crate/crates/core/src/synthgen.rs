//! Synthetic audio-video clips with known event frames.
//!
//! A bounce is a ball that drifts slowly along a shallow arc and, at each
//! event frame, is knocked down by `KICK_PX` pixels in one frame before
//! rebounding exponentially. A flash is a disk whose brightness jumps at each
//! event and then decays. Every event is accompanied by a 2 kHz click that
//! starts at `(event + shift_frames) / fps` seconds.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::media_io::{read_video, read_wav, write_rvid, write_wav, AudioSignal, Fps, Video};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Bounce,
    Flash,
}

impl std::str::FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounce" => Ok(EventKind::Bounce),
            "flash" => Ok(EventKind::Flash),
            _ => Err(Error::validation(format!("unknown event kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub n_events: usize,
    pub event_kind: EventKind,
    /// Audio delay relative to the video, in frames.
    pub shift_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            fps: 24,
            duration_secs: 4.0,
            sample_rate: 16_000,
            n_events: 6,
            event_kind: EventKind::Bounce,
            shift_frames: 0,
            seed: 0,
        }
    }
}

/// Downward displacement at an impact.
pub const KICK_PX: f64 = 7.0;
/// Rebound time constant in frames.
const REBOUND_TAU: f64 = 1.5;
const BALL_RADIUS: f64 = 6.0;
const CLICK_HZ: f64 = 2000.0;
const CLICK_SECS: f64 = 0.030;
/// -6 dBFS
const CLICK_AMP: f64 = 0.5;
const NOISE_AMP: f64 = 1e-3;
/// Events avoid the first `EDGE_START` and last `EDGE_END` frames.
const EDGE_START: usize = 6;
const EDGE_END: usize = 4;

impl SynthConfig {
    pub fn frames(&self) -> usize {
        (self.duration_secs * self.fps as f64).round() as usize
    }

    pub fn samples(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }

    /// Minimum distance between events, a quarter second.
    pub fn min_spacing(&self) -> usize {
        (0.25 * self.fps as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::validation("frames must be at least 16x16"));
        }
        if self.fps == 0 || self.sample_rate == 0 {
            return Err(Error::validation("fps and sample rate must be positive"));
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return Err(Error::validation("duration must be positive"));
        }
        let frames = self.frames();
        if self.n_events > 0 {
            let span = frames.saturating_sub(EDGE_START + EDGE_END);
            let need = (self.n_events - 1) * self.min_spacing() + 1;
            if frames < EDGE_START + EDGE_END + 1 || span + 1 < need {
                return Err(Error::validation(format!(
                    "{} events spaced {} frames apart do not fit in {frames} frames",
                    self.n_events,
                    self.min_spacing()
                )));
            }
        }
        Ok(())
    }
}

/// A generated pair with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub video: Video,
    pub audio: AudioSignal,
    /// Frames of the visual events.
    pub video_events: Vec<usize>,
    /// Frames at which clicks start; visual events shifted, dropped past the end.
    pub audio_events: Vec<usize>,
}

/// Sorted event frames in `[EDGE_START, frames - EDGE_END]`, at least
/// `min_spacing` apart.
fn place_events(config: &SynthConfig, rng: &mut Rng) -> Vec<usize> {
    let n = config.n_events;
    if n == 0 {
        return Vec::new();
    }
    let hi = config.frames() - EDGE_END;
    let sp = config.min_spacing();
    let slack = hi - EDGE_START - (n - 1) * sp;
    let mut offsets: Vec<usize> = (0..n).map(|_| rng.range(0, slack + 1)).collect();
    offsets.sort_unstable();
    offsets
        .iter()
        .enumerate()
        .map(|(k, u)| EDGE_START + u + k * sp)
        .collect()
}

/// Downward offset caused by impacts up to frame `f`.
fn kick_offset(f: usize, events: &[usize]) -> f64 {
    events
        .iter()
        .filter(|&&e| e <= f)
        .map(|&e| KICK_PX * (-((f - e) as f64) / REBOUND_TAU).exp())
        .sum()
}

/// Flash brightness in `[0, 1]` at frame `f`.
fn flash_level(f: usize, events: &[usize]) -> f64 {
    let v: f64 = events
        .iter()
        .filter(|&&e| e <= f)
        .map(|&e| (-((f - e) as f64) / REBOUND_TAU).exp())
        .sum();
    0.2 + 0.8 * v.min(1.0)
}

fn draw_disk(frame: &mut [u8], w: usize, h: usize, cx: f64, cy: f64, color: [f64; 3], level: f64) {
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            // one-pixel soft edge
            let cover = (BALL_RADIUS + 0.5 - d).clamp(0.0, 1.0) * level;
            if cover > 0.0 {
                let px = &mut frame[(y * w + x) * 3..(y * w + x) * 3 + 3];
                for (c, target) in px.iter_mut().zip(color) {
                    let v = *c as f64 * (1.0 - cover) + target * cover;
                    *c = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

const BACKGROUND: u8 = 24;
const BALL_COLOR: [f64; 3] = [250.0, 200.0, 90.0];

fn render_video(config: &SynthConfig, events: &[usize], rng: &mut Rng) -> Result<Video> {
    let (w, h) = (config.width as usize, config.height as usize);
    let frames = config.frames();
    let margin = BALL_RADIUS + 2.0;
    let x0 = margin + rng.uniform() * (w as f64 - 2.0 * margin);
    let drift = (rng.uniform() - 0.5) * 0.8;
    let phase = rng.uniform() * std::f64::consts::TAU;
    let span = w as f64 - 2.0 * margin;
    let base_y = h as f64 * 0.45;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut frame = vec![BACKGROUND; w * h * 3];
        match config.event_kind {
            EventKind::Bounce => {
                // reflect the horizontal drift at the walls
                let raw = (x0 - margin + drift * f as f64).rem_euclid(2.0 * span);
                let x = margin + if raw > span { 2.0 * span - raw } else { raw };
                let arc = 2.0 * (phase + f as f64 * 0.12).sin();
                let y = (base_y + arc + kick_offset(f, events)).min(h as f64 - margin);
                draw_disk(&mut frame, w, h, x, y, BALL_COLOR, 1.0);
            }
            EventKind::Flash => {
                let level = flash_level(f, events);
                draw_disk(&mut frame, w, h, x0, h as f64 / 2.0, [255.0; 3], level);
            }
        }
        out.push(frame);
    }
    Video::new(config.width, config.height, Fps::integer(config.fps), out)
}

fn render_audio(config: &SynthConfig, events: &[usize], rng: &mut Rng) -> Result<AudioSignal> {
    let n = config.samples();
    let sr = config.sample_rate as f64;
    let mut samples: Vec<f64> = (0..n).map(|_| NOISE_AMP * (2.0 * rng.uniform() - 1.0)).collect();
    let len = (CLICK_SECS * sr).round() as usize;
    let fade = ((0.001 * sr).round() as usize).max(1);
    for &e in events {
        let start = (e as f64 / config.fps as f64 * sr).round() as usize;
        for k in 0..len.min(n.saturating_sub(start)) {
            let t = k as f64 / sr;
            let attack = ((k + 1) as f64 / fade as f64).min(1.0);
            let env = attack * (-t / (CLICK_SECS / 5.0)).exp();
            samples[start + k] += CLICK_AMP * env * (std::f64::consts::TAU * CLICK_HZ * t).sin();
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioSignal::new(samples, config.sample_rate)
}

/// Deterministic clip for `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthClip> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let video_events = place_events(config, &mut rng);
    let frames = config.frames();
    let audio_events: Vec<usize> = video_events
        .iter()
        .map(|e| e + config.shift_frames)
        .filter(|&e| e < frames)
        .collect();
    let video = render_video(config, &video_events, &mut Rng::stream(config.seed, 1))?;
    let audio = render_audio(config, &audio_events, &mut Rng::stream(config.seed, 2))?;
    Ok(SynthClip {
        video,
        audio,
        video_events,
        audio_events,
    })
}

/// Seed of clip `index` in a corpus seeded with `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    let mut rng = Rng::stream(seed, 0x5eed_0000 + index as u64);
    rng.next_u64()
}

/// Paths of one corpus clip, relative to the corpus directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video: PathBuf,
    pub audio: PathBuf,
    pub video_events: PathBuf,
    pub audio_events: PathBuf,
}

pub const MANIFEST: &str = "manifest.txt";

fn write_events(events: &[usize], path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// One frame index per line.
pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse()
                .map_err(|_| Error::format(format!("bad frame index {l:?}")))
        })
        .collect()
}

/// Writes `n_clips` clips under `dir` plus `manifest.txt`, whose lines hold
/// the video, audio, video-event and audio-event file names of each clip.
pub fn corpus(config: &SynthConfig, n_clips: usize, dir: impl AsRef<Path>, exec: Exec) -> Result<Vec<ManifestEntry>> {
    if n_clips == 0 {
        return Err(Error::validation("corpus needs at least one clip"));
    }
    config.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let entries = exec.map_range(n_clips, |i| -> Result<ManifestEntry> {
        let clip = generate(&SynthConfig {
            seed: clip_seed(config.seed, i),
            ..*config
        })?;
        let stem = format!("clip_{i:03}");
        let entry = ManifestEntry {
            video: format!("{stem}.rvid").into(),
            audio: format!("{stem}.wav").into(),
            video_events: format!("{stem}.video.txt").into(),
            audio_events: format!("{stem}.audio.txt").into(),
        };
        write_rvid(&clip.video, dir.join(&entry.video))?;
        write_wav(&clip.audio, dir.join(&entry.audio))?;
        write_events(&clip.video_events, &dir.join(&entry.video_events))?;
        write_events(&clip.audio_events, &dir.join(&entry.audio_events))?;
        Ok(entry)
    });
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let mut manifest = std::fs::File::create(dir.join(MANIFEST))?;
    for e in &entries {
        writeln!(
            manifest,
            "{} {} {} {}",
            e.video.display(),
            e.audio.display(),
            e.video_events.display(),
            e.audio_events.display()
        )?;
    }
    Ok(entries)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dir.as_ref().join(MANIFEST);
    let reader = BufReader::new(std::fs::File::open(&path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Error::format(format!(
                "{}:{}: expected 4 fields, found {}",
                path.display(),
                n + 1,
                parts.len()
            )));
        }
        out.push(ManifestEntry {
            video: parts[0].into(),
            audio: parts[1].into(),
            video_events: parts[2].into(),
            audio_events: parts[3].into(),
        });
    }
    if out.is_empty() {
        return Err(Error::format(format!("{} lists no clips", path.display())));
    }
    Ok(out)
}

/// Reads every clip listed in the manifest.
pub fn load_corpus(dir: impl AsRef<Path>, exec: Exec) -> Result<Vec<(Video, AudioSignal)>> {
    let dir = dir.as_ref();
    let entries = read_manifest(dir)?;
    exec.map(&entries, |e| Ok((read_video(dir.join(&e.video))?, read_wav(dir.join(&e.audio))?)))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_analysis::{detect_onsets, OnsetParams};
    use crate::av_align::{av_align_from_media, detect_media_peaks, AlignConfig};

    #[test]
    fn events_respect_spacing_and_edges() {
        for seed in 0..50 {
            let c = SynthConfig {
                seed,
                ..Default::default()
            };
            let clip = generate(&c).unwrap();
            let ev = &clip.video_events;
            assert_eq!(ev.len(), 6);
            assert!(ev[0] >= EDGE_START && *ev.last().unwrap() <= c.frames() - EDGE_END);
            assert!(ev.windows(2).all(|p| p[1] - p[0] >= c.min_spacing()));
            assert_eq!(clip.video.frame_count(), 96);
            assert_eq!(clip.audio.len(), 64_000);
        }
    }

    #[test]
    fn shift_moves_audio_events_exactly() {
        let base = SynthConfig {
            seed: 3,
            ..Default::default()
        };
        let a = generate(&base).unwrap();
        assert_eq!(a.audio_events, a.video_events);
        let b = generate(&SynthConfig {
            shift_frames: 5,
            ..base
        })
        .unwrap();
        assert_eq!(b.video_events, a.video_events);
        let expect: Vec<usize> = a.video_events.iter().map(|e| e + 5).filter(|&e| e < 96).collect();
        assert_eq!(b.audio_events, expect);
        assert_eq!(b.video, a.video);
    }

    #[test]
    fn deterministic() {
        let c = SynthConfig {
            seed: 11,
            event_kind: EventKind::Flash,
            ..Default::default()
        };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let d = SynthConfig { seed: 12, ..c };
        assert_ne!(generate(&c).unwrap().video, generate(&d).unwrap().video);
    }

    #[test]
    fn infeasible_config_rejected() {
        let c = SynthConfig {
            n_events: 20,
            ..Default::default()
        };
        assert!(matches!(generate(&c), Err(Error::Validation(_))));
        let c = SynthConfig {
            duration_secs: 0.0,
            ..Default::default()
        };
        assert!(generate(&c).is_err());
    }

    #[test]
    fn onsets_recover_ground_truth() {
        for seed in 0..10 {
            let clip = generate(&SynthConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            let onsets = detect_onsets(&clip.audio, Fps::integer(24), &OnsetParams::default(), Some(96)).unwrap();
            let found = clip
                .audio_events
                .iter()
                .filter(|&&e| onsets.has_near(e, 1))
                .count();
            assert!(found * 6 >= 5 * clip.audio_events.len(), "seed {seed}: {onsets:?} vs {:?}", clip.audio_events);
            assert!(onsets.indices().iter().all(|&o| clip.audio_events.iter().any(|&e| e.abs_diff(o) <= 1)));
            let exact = clip.audio_events.iter().filter(|&&e| onsets.contains(e)).count();
            assert!(exact * 6 >= 5 * clip.audio_events.len(), "seed {seed}: {onsets:?} vs {:?}", clip.audio_events);
        }
    }

    #[test]
    fn motion_peaks_recover_ground_truth() {
        for kind in [EventKind::Bounce, EventKind::Flash] {
            for seed in 0..4 {
                let clip = generate(&SynthConfig {
                    seed,
                    event_kind: kind,
                    ..Default::default()
                })
                .unwrap();
                let peaks = detect_media_peaks(&clip.video, &clip.audio, &AlignConfig::default()).unwrap();
                let found = clip
                    .video_events
                    .iter()
                    .filter(|&&e| peaks.video.has_near(e, 1))
                    .count();
                assert!(found >= 5, "{kind:?} seed {seed}: {:?} vs {:?}", peaks.video, clip.video_events);
            }
        }
    }

    #[test]
    fn alignment_degrades_with_shift() {
        for seed in 0..3 {
            let score = |shift| {
                let clip = generate(&SynthConfig {
                    seed,
                    shift_frames: shift,
                    ..Default::default()
                })
                .unwrap();
                av_align_from_media(&clip.video, &clip.audio, &AlignConfig::default())
                    .unwrap()
                    .score
            };
            let (s0, s12) = (score(0), score(12));
            assert!(s0 >= 0.8 && s12 <= 0.5 * s0, "seed {seed}: {s0} vs {s12}");
        }
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = SynthConfig {
            seed: 9,
            duration_secs: 2.0,
            n_events: 3,
            ..Default::default()
        };
        let entries = corpus(&c, 3, dir.path(), Exec::default()).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
        let loaded = load_corpus(dir.path(), Exec::Sequential).unwrap();
        let again = generate(&SynthConfig {
            seed: clip_seed(9, 1),
            ..c
        })
        .unwrap();
        assert_eq!(loaded[1].0, again.video);
        assert_eq!(read_events(dir.path().join(&entries[1].video_events)).unwrap(), again.video_events);

        let other = tempfile::tempdir().unwrap();
        corpus(&c, 3, other.path(), Exec::Sequential).unwrap();
        for e in &entries {
            for p in [&e.video, &e.audio, &e.video_events, &e.audio_events] {
                assert_eq!(
                    std::fs::read(dir.path().join(p)).unwrap(),
                    std::fs::read(other.path().join(p)).unwrap()
                );
            }
        }
    }
}
