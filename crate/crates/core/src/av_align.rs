//! The AV-Align score: audio onsets and motion peaks matched within a frame
//! tolerance and normalized by twice the size of their union.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::audio_analysis::{detect_onsets, OnsetParams};
use crate::error::{Error, Result};
use crate::media_io::{AudioSignal, Video};
use crate::motion_analysis::{detect_motion_peaks, motion_curve, FlowParams, MotionPeakParams};
pub use crate::peaks::PeakSet;

/// Default tolerance: a three-frame window centered on the peak.
pub const DEFAULT_TOLERANCE: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub score: f64,
    pub matched_audio: usize,
    pub matched_video: usize,
    pub tolerance: usize,
    pub audio_peaks: usize,
    pub video_peaks: usize,
    pub union_size: usize,
    /// Both peak sets were empty; the score is defined as 1.
    pub vacuous: bool,
}

impl AlignReport {
    /// One `key=value` pair per line, in field order.
    pub fn to_key_value(&self) -> String {
        format!(
            "score={:.6}\nmatched_audio={}\nmatched_video={}\ntolerance={}\naudio_peaks={}\nvideo_peaks={}\nunion_size={}\nvacuous={}\n",
            self.score,
            self.matched_audio,
            self.matched_video,
            self.tolerance,
            self.audio_peaks,
            self.video_peaks,
            self.union_size,
            self.vacuous
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn union_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
        n += 1;
    }
    n + (a.len() - i) + (b.len() - j)
}

pub fn av_align_score(audio: &PeakSet, video: &PeakSet, tolerance: usize) -> AlignReport {
    let matched_audio = audio
        .indices()
        .iter()
        .filter(|&&a| video.has_near(a, tolerance))
        .count();
    let matched_video = video
        .indices()
        .iter()
        .filter(|&&v| audio.has_near(v, tolerance))
        .count();
    let union = union_size(audio.indices(), video.indices());
    let vacuous = union == 0;
    let score = if vacuous {
        1.0
    } else {
        (matched_audio + matched_video) as f64 / (2 * union) as f64
    };
    AlignReport {
        score,
        matched_audio,
        matched_video,
        tolerance,
        audio_peaks: audio.len(),
        video_peaks: video.len(),
        union_size: union,
        vacuous,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub onset: OnsetParams,
    pub flow: FlowParams,
    pub motion: MotionPeakParams,
    pub tolerance: usize,
    /// Streams whose durations differ by more than this fraction of the
    /// longer one are rejected instead of truncated.
    pub max_duration_mismatch: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            onset: OnsetParams::default(),
            flow: FlowParams::default(),
            motion: MotionPeakParams::default(),
            tolerance: DEFAULT_TOLERANCE,
            max_duration_mismatch: 0.5,
        }
    }
}

/// Peaks detected in each modality, plus the motion curve they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct MediaPeaks {
    pub audio: PeakSet,
    pub video: PeakSet,
    pub motion_curve: Vec<f64>,
}

/// Truncates both streams to the shorter duration when they differ by more
/// than one frame, warning about it.
fn reconcile(video: &Video, audio: &AudioSignal, config: &AlignConfig) -> Result<(Video, AudioSignal)> {
    let fps = video.fps.as_f64();
    let vd = video.duration_secs();
    let ad = audio.duration_secs();
    let frame = 1.0 / fps;
    if (vd - ad).abs() <= frame {
        return Ok((video.clone(), audio.clone()));
    }
    if (vd - ad).abs() > config.max_duration_mismatch * vd.max(ad) {
        return Err(Error::DurationMismatch(format!(
            "video lasts {vd:.3} s but audio lasts {ad:.3} s"
        )));
    }
    warn!("video lasts {vd:.3} s, audio {ad:.3} s; truncating both to the shorter");
    let keep = vd.min(ad);
    let mut v = video.clone();
    v.truncate(((keep * fps).round() as usize).max(1));
    let mut a = audio.clone();
    a.samples.truncate(((keep * audio.sample_rate as f64).round() as usize).max(1));
    Ok((v, a))
}

pub fn detect_media_peaks(video: &Video, audio: &AudioSignal, config: &AlignConfig) -> Result<MediaPeaks> {
    let (video, audio) = reconcile(video, audio, config)?;
    let audio_peaks = detect_onsets(&audio, video.fps, &config.onset, Some(video.frame_count()))?;
    let curve = if video.frame_count() >= 2 {
        motion_curve(&video, &config.flow)?
    } else {
        vec![0.0]
    };
    let video_peaks = detect_motion_peaks(&curve, &config.motion)?;
    Ok(MediaPeaks {
        audio: audio_peaks,
        video: video_peaks,
        motion_curve: curve,
    })
}

/// End-to-end score from decoded media.
pub fn av_align_from_media(video: &Video, audio: &AudioSignal, config: &AlignConfig) -> Result<AlignReport> {
    let peaks = detect_media_peaks(video, audio, config)?;
    Ok(av_align_score(&peaks.audio, &peaks.video, config.tolerance))
}
