//! Peak sets and the adaptive peak picker shared by the audio and video
//! halves of the alignment metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing list of frame indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakSet(Vec<usize>);

impl PeakSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "peak indices must be strictly increasing: {indices:?}"
            )));
        }
        Ok(PeakSet(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        PeakSet(indices)
    }

    pub fn empty() -> Self {
        PeakSet(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    /// True if some member lies within `tolerance` of `index`.
    pub fn has_near(&self, index: usize, tolerance: usize) -> bool {
        let lo = index.saturating_sub(tolerance);
        let pos = self.0.partition_point(|&p| p < lo);
        self.0.get(pos).is_some_and(|&p| p <= index + tolerance)
    }
}

impl From<PeakSet> for Vec<usize> {
    fn from(p: PeakSet) -> Self {
        p.0
    }
}

/// Median/MAD adaptive threshold with a local-maximum constraint.
///
/// A sample `x[t]` is a peak when
/// * `x[t] > median(window) + threshold_k * MAD(window)` over a centered
///   window of `smoothing` samples (shrunk at the edges),
/// * it is the maximum within `±local_radius` (earliest wins on ties),
/// * `x[t] - min(x) >= min_rel_height * (max(x) - min(x))`.
///
/// All three tests are invariant to adding a constant to the curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakPicker {
    pub threshold_k: f64,
    pub smoothing: usize,
    pub local_radius: usize,
    pub min_rel_height: f64,
}

impl Default for PeakPicker {
    fn default() -> Self {
        PeakPicker {
            threshold_k: 1.5,
            smoothing: 5,
            local_radius: 2,
            min_rel_height: 0.1,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl PeakPicker {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_k > 0.0) {
            return Err(Error::validation("threshold_k must be positive"));
        }
        if self.smoothing == 0 {
            return Err(Error::validation("smoothing window must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.min_rel_height) {
            return Err(Error::validation("min_rel_height must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Indices of `curve` that are peaks, ascending.
    pub fn pick(&self, curve: &[f64]) -> Vec<usize> {
        let n = curve.len();
        if n == 0 {
            return Vec::new();
        }
        let lo = curve.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let height_gate = self.min_rel_height * (hi - lo);
        let half = self.smoothing / 2;
        let mut peaks = Vec::new();
        let mut window = Vec::with_capacity(self.smoothing);
        for t in 0..n {
            let x = curve[t];
            if x - lo < height_gate {
                continue;
            }
            let a = t.saturating_sub(self.local_radius);
            let b = (t + self.local_radius).min(n - 1);
            let is_local_max = (a..t).all(|s| curve[s] < x) && (t + 1..=b).all(|s| curve[s] <= x);
            if !is_local_max {
                continue;
            }
            window.clear();
            window.extend_from_slice(&curve[t.saturating_sub(half)..=(t + half).min(n - 1)]);
            let med = median(&mut window);
            for v in window.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median(&mut window);
            if x > med + self.threshold_k * mad {
                peaks.push(t);
            }
        }
        peaks
    }
}
