//! `TTCKPT1` checkpoints.
//!
//! Layout: the 7-byte magic, a `u32` record count, then per record a `u32`
//! name length, the UTF-8 name and one `TTE1` tensor record whose dims are
//! the tensor shape left-padded with ones. The first record,
//! `meta.config`, holds the [`ModelConfig`] as small integers (the 64-bit
//! backbone seed is split into four 16-bit chunks). The remaining records
//! are the adapter tensors in [`ParamSet`] order. Frozen weights are not
//! stored; they are regenerated from the backbone seed.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use super::{Adapter, ModelConfig};
use crate::error::{Error, Result};
use crate::media_io::{read_tensor3, write_tensor3, Fps};
use crate::numerics::ParamSet;
use crate::tempo_tokens::ConditionMode;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"TTCKPT1";
const RECORD_MAGIC: &[u8; 4] = b"TTE1";
const META: &str = "meta.config";
const META_LEN: usize = 22;
/// Largest integer every binary32 value represents exactly.
const EXACT_F32: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub adapter: Adapter,
}

fn encode_config(c: &ModelConfig) -> Result<Vec<f64>> {
    let (kind, max_res) = match c.mode {
        ConditionMode::Windows { max_resolutions } => (0, max_resolutions.unwrap_or(0)),
        ConditionMode::Vector => (1, 0),
    };
    let mut v: Vec<u64> = [
        c.layers,
        c.enc_dim,
        c.token_dim,
        c.mapper_hidden,
        c.pool_local,
        c.pool_cross,
        c.latent_dim,
        c.attn_dim,
        c.time_dim,
        c.denoiser_hidden,
        c.width as usize,
        c.height as usize,
        c.fps.num as usize,
        c.fps.den as usize,
        c.frames,
        c.diffusion_steps,
        kind,
        max_res,
    ]
    .iter()
    .map(|&x| x as u64)
    .collect();
    v.extend((0..4).map(|k| (c.backbone_seed >> (16 * k)) & 0xffff));
    if let Some(x) = v.iter().find(|&&x| x > EXACT_F32) {
        return Err(Error::validation(format!(
            "config value {x} is too large for a checkpoint"
        )));
    }
    Ok(v.into_iter().map(|x| x as f64).collect())
}

fn decode_config(values: &[f64]) -> Result<ModelConfig> {
    if values.len() != META_LEN {
        return Err(Error::format(format!(
            "{META} has {} values, expected {META_LEN}",
            values.len()
        )));
    }
    let mut ints = Vec::with_capacity(META_LEN);
    for v in values {
        if *v < 0.0 || v.fract() != 0.0 || *v > EXACT_F32 as f64 {
            return Err(Error::format(format!("{META} holds non-integer {v}")));
        }
        ints.push(*v as u64);
    }
    let u = |i: usize| ints[i] as usize;
    let small = |i: usize| {
        u32::try_from(ints[i]).map_err(|_| Error::format(format!("{META} value {} out of range", ints[i])))
    };
    let mode = match ints[16] {
        0 => ConditionMode::Windows {
            max_resolutions: (ints[17] > 0).then(|| u(17)),
        },
        1 => ConditionMode::Vector,
        k => return Err(Error::format(format!("unknown condition mode {k}"))),
    };
    let seed = (0..4).fold(0u64, |acc, k| acc | (ints[18 + k] << (16 * k)));
    let config = ModelConfig {
        layers: u(0),
        enc_dim: u(1),
        token_dim: u(2),
        mapper_hidden: u(3),
        pool_local: u(4),
        pool_cross: u(5),
        latent_dim: u(6),
        attn_dim: u(7),
        time_dim: u(8),
        denoiser_hidden: u(9),
        width: small(10)?,
        height: small(11)?,
        fps: Fps::new(small(12)?, small(13)?).map_err(|e| Error::format(e.to_string()))?,
        frames: u(14),
        diffusion_steps: u(15),
        mode,
        backbone_seed: seed,
    };
    config
        .validate()
        .map_err(|e| Error::format(format!("invalid {META}: {e}")))?;
    Ok(config)
}

fn padded_dims(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() > 3 {
        return Err(Error::shape(format!("tensor of rank {} cannot be stored", shape.len())));
    }
    let mut dims = [1usize; 3];
    dims[3 - shape.len()..].copy_from_slice(shape);
    Ok(dims)
}

fn write_record(w: &mut impl Write, name: &str, dims: [usize; 3], values: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    write_tensor3(w, RECORD_MAGIC, dims, values)
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::format("truncated record name length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 4096 {
        return Err(Error::format(format!("record name of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("truncated record name"))?;
    String::from_utf8(buf).map_err(|_| Error::format("record name is not UTF-8"))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let tensors = self.adapter.tensors();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&((tensors.len() + 1) as u32).to_le_bytes())?;
        write_record(w, META, [1, 1, META_LEN], &encode_config(&self.config)?)?;
        for (name, t) in tensors {
            write_record(w, &name, padded_dims(t.shape())?, t.data())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format("file too short for checkpoint magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let mut count = [0u8; 4];
        r.read_exact(&mut count)
            .map_err(|_| Error::format("truncated record count"))?;
        let count = u32::from_le_bytes(count) as usize;

        if count == 0 || read_name(r)? != META {
            return Err(Error::format(format!("first record must be {META}")));
        }
        let meta = read_tensor3(r, RECORD_MAGIC, false)?;
        let config = decode_config(&meta.values)?;

        let mut adapter = Adapter::init(&config, 0);
        let expected: Vec<(String, Vec<usize>)> = adapter
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if count != expected.len() + 1 {
            return Err(Error::format(format!(
                "{} records, expected {} for this config",
                count,
                expected.len() + 1
            )));
        }
        let mut flat = Vec::with_capacity(adapter.num_params());
        for (name, shape) in &expected {
            let got = read_name(r)?;
            if &got != name {
                return Err(Error::format(format!("record {got:?}, expected {name:?}")));
            }
            let rec = read_tensor3(r, RECORD_MAGIC, false)?;
            if rec.dims != padded_dims(shape)? {
                return Err(Error::format(format!(
                    "{name} has dims {:?}, expected shape {shape:?}",
                    rec.dims
                )));
            }
            flat.extend(rec.values);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("trailing bytes after the last record"));
        }
        adapter.assign_flat(&flat);
        Ok(Checkpoint { config, adapter })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut Cursor::new(bytes))
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
