use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{expect_magic, read_u32};
use crate::error::{Error, Result};

const RVID_MAGIC: &[u8; 4] = b"RVID";
const MANIFEST: &str = "manifest.txt";

/// Frame rate as a rational number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::validation(format!("invalid fps {num}/{den}")));
        }
        Ok(Fps { num, den })
    }

    pub fn integer(num: u32) -> Self {
        Fps { num, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::str::FromStr for Fps {
    type Err = Error;

    /// Parses `"24"`, `"30000/1001"` or a decimal such as `"29.97"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::validation(format!("cannot parse fps {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            return Fps::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        if let Ok(n) = s.parse::<u32>() {
            return Fps::new(n, 1);
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(bad());
        }
        Fps::new((v * 1000.0).round() as u32, 1000)
    }
}

impl std::fmt::Display for Fps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// 8-bit RGB video; every frame is `height * width * 3` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Video {
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    pub frames: Vec<Vec<u8>>,
}

impl Video {
    pub fn new(width: u32, height: u32, fps: Fps, frames: Vec<Vec<u8>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation("video dimensions must be positive"));
        }
        if frames.is_empty() {
            return Err(Error::validation("video needs at least one frame"));
        }
        let size = (width * height * 3) as usize;
        if let Some(i) = frames.iter().position(|f| f.len() != size) {
            return Err(Error::validation(format!(
                "frame {i} has {} bytes, expected {size}",
                frames[i].len()
            )));
        }
        Ok(Video {
            width,
            height,
            fps,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_bytes(&self) -> usize {
        (self.width * self.height * 3) as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps.as_f64()
    }

    /// Keeps the first `n` frames.
    pub fn truncate(&mut self, n: usize) {
        self.frames.truncate(n.max(1));
    }
}

/// Reads an RVID file, or a directory of P6 PPM frames with a manifest.
pub fn read_video(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    if path.is_dir() {
        return read_ppm_dir(path);
    }
    let mut r = BufReader::new(fs::File::open(path)?);
    expect_magic(&mut r, RVID_MAGIC)?;
    let width = read_u32(&mut r, "width")?;
    let height = read_u32(&mut r, "height")?;
    let count = read_u32(&mut r, "frame_count")?;
    let fps = Fps::new(read_u32(&mut r, "fps_num")?, read_u32(&mut r, "fps_den")?)
        .map_err(|e| Error::format(e.to_string()))?;
    let size = width as usize * height as usize * 3;
    if size == 0 || count == 0 {
        return Err(Error::format("RVID with empty frames"));
    }
    let mut frames = Vec::with_capacity(count as usize);
    for i in 0..count {
        let mut frame = vec![0u8; size];
        r.read_exact(&mut frame).map_err(|_| {
            Error::format(format!(
                "truncated payload: header declares {count} frames, got {i}"
            ))
        })?;
        frames.push(frame);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after RVID payload"));
    }
    Video::new(width, height, fps, frames)
}

pub fn write_rvid(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(RVID_MAGIC)?;
    for v in [
        video.width,
        video.height,
        video.frames.len() as u32,
        video.fps.num,
        video.fps.den,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in &video.frames {
        w.write_all(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes RVID. Use [`write_ppm_dir`] for the frame-directory layout.
pub fn write_video(video: &Video, path: impl AsRef<Path>) -> Result<()> {
    write_rvid(video, path)
}

/// Writes `frame_NNNNN.ppm` files plus `manifest.txt` (`fps=N/D`, then one
/// frame file name per line) into `dir`.
pub fn write_ppm_dir(video: &Video, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = format!("fps={}\n", video.fps);
    for (i, frame) in video.frames.iter().enumerate() {
        let name = format!("frame_{i:05}.ppm");
        let mut bytes = format!("P6\n{} {}\n255\n", video.width, video.height).into_bytes();
        bytes.extend_from_slice(frame);
        fs::write(dir.join(&name), bytes)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn read_ppm_dir(dir: &Path) -> Result<Video> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut lines = manifest.lines().map(str::trim).filter(|l| !l.is_empty());
    let fps = lines
        .next()
        .and_then(|l| l.strip_prefix("fps="))
        .ok_or_else(|| Error::format("manifest must start with fps=N/D"))?
        .parse::<Fps>()
        .map_err(|e| Error::format(e.to_string()))?;
    let mut dims = None;
    let mut frames = Vec::new();
    for name in lines {
        let (w, h, data) = parse_ppm(&fs::read(dir.join(name))?)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::format(format!("frame {name} has different dimensions")))
            }
            _ => {}
        }
        frames.push(data);
    }
    let (w, h) = dims.ok_or_else(|| Error::format("manifest lists no frames"))?;
    Video::new(w, h, fps, frames).map_err(|e| Error::format(e.to_string()))
}

fn parse_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::format("only binary P6 PPM is supported"));
    }
    let num = |s: String| s.parse::<u32>().map_err(|_| Error::format("bad PPM header"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    if num(token()?)? != 255 {
        return Err(Error::format("PPM maxval must be 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let size = w as usize * h as usize * 3;
    if bytes.len() < pos + size {
        return Err(Error::format("truncated PPM raster"));
    }
    Ok((w, h, bytes[pos..pos + size].to_vec()))
}
