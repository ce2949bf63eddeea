//! Feature cache: `FSVTFEAT`, `T: u64`, `D: u64`, `hop_s: f64`, `t0_s: f64`,
//! then `T·D` row-major `f32`, all little-endian.

use std::io::{Read, Write};

use super::FeatureSequence;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"FSVTFEAT";

pub fn write_features<W: Write>(mut w: W, f: &FeatureSequence) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(f.n_frames as u64).to_le_bytes())?;
    w.write_all(&(f.dim as u64).to_le_bytes())?;
    w.write_all(&f.hop_s.to_le_bytes())?;
    w.write_all(&f.t0_s.to_le_bytes())?;
    for v in &f.frames {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<FeatureSequence> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("feature cache", "bad magic"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let t = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let d = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let hop = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let t0 = f64::from_le_bytes(b8);
    let n = t
        .checked_mul(d)
        .ok_or_else(|| Error::format("feature cache", "size overflow"))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let frames = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    FeatureSequence::new(frames, t, d, hop, t0)
}
