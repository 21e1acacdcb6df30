//! Media and tensor exchange formats.
//!
//! All binary formats are little-endian with IEEE-754 binary32 payloads:
//!
//! * `RVID`: magic, `u32` width, height, frame_count, fps_num, fps_den, then
//!   `frame_count * width * height * 3` RGB bytes (row-major, top-left origin).
//! * `TTE1`: magic, `u32` L, layers, dim, then `L * layers * dim` floats in
//!   (segment, layer, channel) order.
//! * `TTC1`: magic, `u32` L, tokens_per_frame, token_dim, then floats in
//!   (frame, token, channel) order.
//!
//! WAV input must be RIFF/WAVE PCM 16-bit, mono or stereo.

mod tensor_files;
mod video;
mod wav;

pub use tensor_files::{
    read_condition, read_embeddings, read_tensor3, write_condition, write_condition_file,
    write_embeddings, write_tensor3, AudioEmbeddings, ConditionFile, TensorRecord,
};
pub use video::{read_video, write_ppm_dir, write_rvid, write_video, Fps, Video};
pub use wav::{read_wav, write_wav, AudioSignal};

use std::io::Read;

use crate::error::{Error, Result};

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(format!("truncated header reading {what}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8]) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("file too short for magic"))?;
    if buf != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
