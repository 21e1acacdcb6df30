use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{expect_magic, read_u32};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tempo_tokens::ConditioningSequence;

const TTE_MAGIC: &[u8; 4] = b"TTE1";
const TTC_MAGIC: &[u8; 4] = b"TTC1";

/// Encoder activations, shape `L x layers x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioEmbeddings {
    pub values: Tensor,
}

impl AudioEmbeddings {
    pub fn new(values: Tensor) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] == 0 || s[1] == 0 || s[2] == 0 {
            return Err(Error::shape(format!(
                "embeddings must be L x layers x dim with L >= 1, got {s:?}"
            )));
        }
        if !values.all_finite() {
            return Err(Error::validation("embeddings contain non-finite values"));
        }
        Ok(AudioEmbeddings { values })
    }

    pub fn segments(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn layers(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Flattened `layers * dim` vector of segment `i`.
    pub fn segment(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Segments `start..start + len` as a new embedding.
    pub fn slice(&self, start: usize, len: usize) -> Result<AudioEmbeddings> {
        if len == 0 || start + len > self.segments() {
            return Err(Error::domain(format!(
                "segment range {start}..{} outside 0..{}",
                start + len,
                self.segments()
            )));
        }
        let stride = self.layers() * self.dim();
        let data = self.values.data()[start * stride..(start + len) * stride].to_vec();
        AudioEmbeddings::new(Tensor::new(vec![len, self.layers(), self.dim()], data)?)
    }
}

/// Decoded TTC1 contents, shape `L x tokens_per_frame x token_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFile {
    pub tokens: Tensor,
}

impl ConditionFile {
    pub fn frames(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn token(&self, frame: usize, token: usize) -> &[f64] {
        let d = self.token_dim();
        let start = (frame * self.tokens_per_frame() + token) * d;
        &self.tokens.data()[start..start + d]
    }
}

/// A three-axis tensor record: magic, three `u32` dims, binary32 payload.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

pub fn write_tensor3(w: &mut impl Write, magic: &[u8; 4], dims: [usize; 3], values: &[f64]) -> Result<()> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::shape(format!(
            "dims {dims:?} do not match {} values",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("refusing to write non-finite values"));
    }
    w.write_all(magic)?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::shape("dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record; with `exact_end`, trailing bytes are an error.
pub fn read_tensor3(r: &mut impl Read, magic: &[u8; 4], exact_end: bool) -> Result<TensorRecord> {
    expect_magic(r, magic)?;
    let dims = [
        read_u32(r, "dim 0")? as usize,
        read_u32(r, "dim 1")? as usize,
        read_u32(r, "dim 2")? as usize,
    ];
    let n: usize = dims.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload).map_err(|_| {
        Error::format(format!("payload shorter than the declared {n} values"))
    })?;
    if exact_end {
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format(format!(
                "payload longer than the declared {n} values"
            )));
        }
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite value at index {i}")));
    }
    Ok(TensorRecord { dims, values })
}

pub fn write_embeddings(emb: &AudioEmbeddings, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_tensor3(
        &mut w,
        TTE_MAGIC,
        [emb.segments(), emb.layers(), emb.dim()],
        emb.values.data(),
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<AudioEmbeddings> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let rec = read_tensor3(&mut r, TTE_MAGIC, true)?;
    if rec.dims.contains(&0) {
        return Err(Error::format(format!("empty embedding dims {:?}", rec.dims)));
    }
    AudioEmbeddings::new(Tensor::new(rec.dims.to_vec(), rec.values)?)
}

/// Writes a TTC1 file. Every frame must carry the same number of tokens,
/// each of the same width.
pub fn write_condition(cond: &ConditioningSequence, path: impl AsRef<Path>) -> Result<()> {
    write_condition_file(&cond.to_condition_file()?, path)
}

pub fn write_condition_file(file: &ConditionFile, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let s = file.tokens.shape();
    write_tensor3(&mut w, TTC_MAGIC, [s[0], s[1], s[2]], file.tokens.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_condition(path: impl AsRef<Path>) -> Result<ConditionFile> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let rec = read_tensor3(&mut r, TTC_MAGIC, true)?;
    Ok(ConditionFile {
        tokens: Tensor::new(rec.dims.to_vec(), rec.values)?,
    })
}
