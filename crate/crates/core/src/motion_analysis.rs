//! Grayscale conversion, Horn–Schunck optical flow, per-frame motion
//! magnitude and motion-peak picking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::media_io::Video;
use crate::peaks::{PeakPicker, PeakSet};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Pixel with half-sample symmetric reflection at the borders.
    fn at(&self, x: isize, y: isize) -> f64 {
        let rx = reflect(x, self.width);
        let ry = reflect(y, self.height);
        self.data[ry * self.width + rx]
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Rec.601 luma of an 8-bit RGB frame, scaled to `[0, 1]`.
pub fn to_grayscale(frame: &[u8], width: usize, height: usize) -> Result<GrayImage> {
    if frame.len() != width * height * 3 {
        return Err(Error::shape("RGB frame size does not match dimensions"));
    }
    let data = frame
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect();
    GrayImage::new(width, height, data)
}

/// Horn–Schunck settings. `alpha` is expressed in 8-bit intensity units:
/// images are scaled by 255 before the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 10.0,
            iterations: 100,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.iterations == 0 {
            return Err(Error::validation("flow needs alpha > 0 and at least one iteration"));
        }
        Ok(())
    }
}

/// Dense displacement field in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn mean_magnitude(&self) -> f64 {
        let sum: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .sum();
        sum / self.u.len() as f64
    }
}

/// Horn–Schunck flow from `f1` to `f2`.
///
/// Spatial gradients are central differences averaged over both frames,
/// the temporal gradient is `f2 - f1`, borders reflect, and exactly
/// `params.iterations` Jacobi sweeps are run from zero flow.
pub fn optical_flow(f1: &GrayImage, f2: &GrayImage, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if f1.width != f2.width || f1.height != f2.height {
        return Err(Error::shape(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            f1.width, f1.height, f2.width, f2.height
        )));
    }
    let (w, h) = (f1.width, f1.height);
    if w < 3 || h < 3 {
        return Err(Error::shape("optical flow needs frames of at least 3x3"));
    }
    let n = w * h;
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let k = y as usize * w + x as usize;
            let gx = |f: &GrayImage| 0.5 * (f.at(x + 1, y) - f.at(x - 1, y));
            let gy = |f: &GrayImage| 0.5 * (f.at(x, y + 1) - f.at(x, y - 1));
            ix[k] = 255.0 * 0.5 * (gx(f1) + gx(f2));
            iy[k] = 255.0 * 0.5 * (gy(f1) + gy(f2));
            it[k] = 255.0 * (f2.data[k] - f1.data[k]);
        }
    }
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    if it.iter().all(|&d| d == 0.0) {
        return Ok(FlowField { width: w, height: h, u, v });
    }
    let a2 = params.alpha * params.alpha;
    let denom: Vec<f64> = (0..n).map(|k| a2 + ix[k] * ix[k] + iy[k] * iy[k]).collect();
    // reflected neighbour columns and row offsets
    let xs: Vec<[usize; 3]> = (0..w as isize)
        .map(|x| [reflect(x - 1, w), x as usize, reflect(x + 1, w)])
        .collect();
    let ys: Vec<[usize; 3]> = (0..h as isize)
        .map(|y| [reflect(y - 1, h) * w, y as usize * w, reflect(y + 1, h) * w])
        .collect();
    let mut nu = vec![0.0; n];
    let mut nv = vec![0.0; n];
    for _ in 0..params.iterations {
        for [up, row, down] in &ys {
            for [left, col, right] in &xs {
                let avg = |f: &[f64]| {
                    (f[row + left] + f[row + right] + f[up + col] + f[down + col]) / 6.0
                        + (f[up + left] + f[up + right] + f[down + left] + f[down + right]) / 12.0
                };
                let k = row + col;
                let ub = avg(&u);
                let vb = avg(&v);
                let t = (ix[k] * ub + iy[k] * vb + it[k]) / denom[k];
                nu[k] = ub - ix[k] * t;
                nv[k] = vb - iy[k] * t;
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    Ok(FlowField { width: w, height: h, u, v })
}

/// Mean flow magnitude between consecutive frames; `curve[0] = 0`.
pub fn motion_curve(video: &Video, params: &FlowParams) -> Result<Vec<f64>> {
    motion_curve_with(video, params, Exec::default())
}

pub fn motion_curve_with(video: &Video, params: &FlowParams, exec: Exec) -> Result<Vec<f64>> {
    params.validate()?;
    let (w, h) = (video.width as usize, video.height as usize);
    let gray: Vec<GrayImage> = exec
        .map(&video.frames, |f| to_grayscale(f, w, h))
        .into_iter()
        .collect::<Result<_>>()?;
    let pairs = exec.map_range(gray.len().saturating_sub(1), |i| {
        optical_flow(&gray[i], &gray[i + 1], params).map(|f| f.mean_magnitude())
    });
    let mut curve = Vec::with_capacity(gray.len());
    curve.push(0.0);
    for m in pairs {
        curve.push(m?);
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionPeakParams {
    pub picker: PeakPicker,
    /// Pick peaks of the rectified first difference instead of the curve.
    pub derivative: bool,
}

pub fn detect_motion_peaks(curve: &[f64], params: &MotionPeakParams) -> Result<PeakSet> {
    params.picker.validate()?;
    let picked = if params.derivative {
        let mut d = vec![0.0; curve.len()];
        for i in 1..curve.len() {
            d[i] = (curve[i] - curve[i - 1]).max(0.0);
        }
        params.picker.pick(&d)
    } else {
        params.picker.pick(curve)
    };
    PeakSet::new(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media_io::Fps;

    fn ramp(w: usize, h: usize, offset: f64) -> GrayImage {
        let data = (0..h)
            .flat_map(|_| (0..w).map(move |x| (x as f64 - offset + 4.0) / (w as f64 + 8.0)))
            .collect();
        GrayImage::new(w, h, data).unwrap()
    }

    fn blob_frame(w: usize, h: usize, cx: f64, cy: f64) -> Vec<u8> {
        let mut f = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (255.0 * (-d2 / 18.0).exp()).round() as u8;
                f[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&[v, v, v]);
            }
        }
        f
    }

    #[test]
    fn grayscale_values() {
        let black = to_grayscale(&[0; 12], 2, 2).unwrap();
        assert!(black.data.iter().all(|&v| v == 0.0));
        let white = to_grayscale(&[255; 12], 2, 2).unwrap();
        assert!(white.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let red = to_grayscale(&[255, 0, 0], 1, 1).unwrap();
        assert!((red.data[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let f = ramp(16, 12, 0.0);
        let flow = optical_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.u.iter().chain(&flow.v).all(|&x| x == 0.0));
    }

    #[test]
    fn ramp_translation_recovers_one_pixel() {
        let (w, h) = (32, 32);
        let f1 = ramp(w, h, 0.0);
        let f2 = ramp(w, h, 1.0);
        let flow = optical_flow(&f1, &f2, &FlowParams::default()).unwrap();
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut n = 0.0;
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                su += flow.u[y * w + x];
                sv += flow.v[y * w + x].abs();
                n += 1.0;
            }
        }
        let (mu, mv) = (su / n, sv / n);
        assert!((0.7..=1.3).contains(&mu), "mean u {mu}");
        assert!(mv < 0.1, "mean |v| {mv}");

        let back = optical_flow(&f2, &f1, &FlowParams::default()).unwrap();
        let bu: f64 = (4..h - 4)
            .flat_map(|y| (4..w - 4).map(move |x| (x, y)))
            .map(|(x, y)| back.u[y * w + x])
            .sum::<f64>()
            / n;
        assert!(bu < 0.0 && (bu + mu).abs() <= 0.2 * mu.abs(), "{bu} vs {mu}");
    }

    #[test]
    fn dimension_checks() {
        let a = ramp(8, 8, 0.0);
        let b = ramp(9, 8, 0.0);
        assert!(matches!(optical_flow(&a, &b, &FlowParams::default()), Err(Error::Shape(_))));
        let tiny = ramp(2, 2, 0.0);
        assert!(optical_flow(&tiny, &tiny, &FlowParams::default()).is_err());
    }

    fn blob_video(positions: &[(f64, f64)]) -> Video {
        let frames = positions.iter().map(|&(x, y)| blob_frame(32, 32, x, y)).collect();
        Video::new(32, 32, Fps::integer(24), frames).unwrap()
    }

    #[test]
    fn static_video_has_flat_curve() {
        let v = blob_video(&[(16.0, 16.0); 6]);
        let c = motion_curve(&v, &FlowParams::default()).unwrap();
        assert_eq!(c, vec![0.0; 6]);
    }

    #[test]
    fn single_jump_is_the_unique_maximum() {
        let mut pos = vec![(10.0, 16.0); 10];
        for p in pos.iter_mut().skip(6) {
            p.0 = 14.0;
        }
        let c = motion_curve(&blob_video(&pos), &FlowParams::default()).unwrap();
        let arg = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(arg, 6);
        assert!(c.iter().enumerate().all(|(i, &v)| i == 6 || v < c[6]));
        assert!(c.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn larger_displacement_does_not_decrease_motion() {
        let small = blob_video(&[(12.0, 16.0), (14.0, 16.0)]);
        let large = blob_video(&[(12.0, 16.0), (16.0, 16.0)]);
        let p = FlowParams::default();
        let cs = motion_curve(&small, &p).unwrap()[1];
        let cl = motion_curve(&large, &p).unwrap()[1];
        assert!(cl >= cs, "{cl} < {cs}");
    }

    #[test]
    fn sequential_and_parallel_curves_match() {
        let pos: Vec<(f64, f64)> = (0..8).map(|i| (8.0 + i as f64, 16.0)).collect();
        let v = blob_video(&pos);
        let p = FlowParams::default();
        assert_eq!(
            motion_curve_with(&v, &p, Exec::Sequential).unwrap(),
            motion_curve_with(&v, &p, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn motion_peaks() {
        let p = MotionPeakParams::default();
        assert!(detect_motion_peaks(&[0.0; 20], &p).unwrap().is_empty());
        let mut c = vec![0.0; 30];
        c[7] = 2.0;
        assert_eq!(detect_motion_peaks(&c, &p).unwrap().indices(), &[7]);
        c[19] = 1.5;
        assert_eq!(detect_motion_peaks(&c, &p).unwrap().indices(), &[7, 19]);
        let shifted: Vec<f64> = c.iter().map(|v| v + 3.0).collect();
        assert_eq!(detect_motion_peaks(&shifted, &p).unwrap(), detect_motion_peaks(&c, &p).unwrap());
        let d = MotionPeakParams { derivative: true, ..p };
        assert_eq!(detect_motion_peaks(&c, &d).unwrap().indices(), &[7, 19]);
    }
}
