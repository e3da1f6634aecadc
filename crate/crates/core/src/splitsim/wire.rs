//! Latent-code messages.
//!
//! ```text
//! offset  size  field
//! 0       1     mode tag (0 = informative, 1 = compressed)
//! 1       4     payload length in bytes, u32 little-endian
//! 5       4*d   code values, IEEE-754 binary32 little-endian
//! ```

use crate::cascade::Mode;
use crate::error::{Error, Result};

pub const HEADER_BYTES: usize = 5;

pub fn encode_message(mode: Mode, code: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + code.len() * 4);
    out.push(mode.tag());
    out.extend_from_slice(&((code.len() * 4) as u32).to_le_bytes());
    for &v in code {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<(Mode, Vec<f32>)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Wire(format!("message of {} bytes is shorter than the header", bytes.len())));
    }
    let mode = Mode::from_tag(bytes[0]).map_err(|e| Error::Wire(e.to_string()))?;
    let len = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
    if len % 4 != 0 || bytes.len() != HEADER_BYTES + len {
        return Err(Error::Wire(format!(
            "payload length {len} does not match message size {}",
            bytes.len()
        )));
    }
    let code = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((mode, code))
}
